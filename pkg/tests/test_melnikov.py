import warnings

import numpy as np
import pytest
from scipy import integrate

from ringlab.melnikov import (
    TraceRangeError,
    connection_trace,
    melnikov,
    melnikov_full,
    melnikov_sweep,
    prepare,
    theta_at,
    theta_profiles,
)
from ringlab.numerics import DomainError
from ringlab.oscillation import h1_terms


@pytest.fixture(scope="module")
def ctx(config, params):
    return prepare(config, params)


@pytest.fixture(scope="module")
def sweep(config, params, ctx):
    return melnikov_sweep(config, params, n_tau=32, context=ctx)


def _sk_oracle(s, x, config, params):
    """S, K by adaptive quadrature of the sigma integrals."""
    r, d = np.sqrt(s), x - config.xi_hat
    S = K = 0.0
    for k, (kk, rk, ck) in enumerate(zip(params.strengths, (config.r1_hat, config.r2_hat),
                                         (1.0, config.A / config.B))):
        D = lambda q: (r - rk) ** 2 + d * d + 4 * r * rk * np.sin(q) ** 2
        N = lambda q: r * (r - rk) + d * d + 2 * r * rk * np.sin(q) ** 2
        j1 = integrate.quad(lambda q: np.cos(2 * q) * N(q) * D(q) ** -1.5, 0, np.pi / 2, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
        j2 = integrate.quad(lambda q: np.cos(2 * q) * D(q) ** -1.5, 0, np.pi / 2, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
        S += (-1) ** (k + 1) / rk * j1
        K += kk * ck * rk * j2
    return 2 * r * S, -4 * r * d * K


def test_theta_spot_values_quadrature_oracle(config, params, ctx):
    s, x = ctx.trace(1.0)
    s, x = float(s), float(x)
    hs, hx = 1e-6 * s, 1e-6
    dS_ds = [(a - b) / (2 * hs) for a, b in zip(_sk_oracle(s + hs, x, config, params), _sk_oracle(s - hs, x, config, params))]
    dS_dx = [(a - b) / (2 * hx) for a, b in zip(_sk_oracle(s, x + hx, config, params), _sk_oracle(s, x - hx, config, params))]
    r2 = 2 * np.sqrt(s)
    oracle = (dS_ds[0], dS_ds[1], dS_dx[0] / r2, dS_dx[1] / r2)
    th = theta_at(s, x, config, params)
    for a, b in zip(th, oracle):
        assert a == pytest.approx(b, rel=1e-7, abs=1e-9)


def test_theta_matches_h1_derivatives(config, params):
    s, x = 0.3, 0.15
    h = 1e-6
    th = theta_at(s, x, config, params)
    dS = (np.array(h1_terms((s + h, x), config, params)) - h1_terms((s - h, x), config, params)) / (2 * h)
    dX = (np.array(h1_terms((s, x + h), config, params)) - h1_terms((s, x - h), config, params)) / (2 * h)
    assert np.allclose(th, [dS[0], dS[1], dX[0] / (2 * np.sqrt(s)), dX[1] / (2 * np.sqrt(s))], rtol=1e-6)


def test_theta_parities(config, params, ctx):
    t = np.array([0.05, 0.3, 0.8])
    plus = theta_profiles(t, config, params, ctx.trace)
    minus = theta_profiles(-t, config, params, ctx.trace)
    assert np.allclose(plus[0], minus[0], rtol=1e-9)
    assert np.allclose(plus[1], -minus[1], rtol=1e-9)
    assert np.allclose(plus[2], -minus[2], rtol=1e-9)
    assert np.allclose(plus[3], minus[3], rtol=1e-9)
    zero = theta_profiles(np.array([0.0]), config, params, ctx.trace)
    assert abs(zero[1][0]) < 1e-8 and abs(zero[2][0]) < 1e-8


def test_trace_reflection(ctx, config):
    s1, x1 = ctx.trace(0.4)
    s2, x2 = ctx.trace(-0.4)
    assert s1 == s2 and x1 + x2 == pytest.approx(2 * config.xi_hat, abs=1e-15)
    with pytest.raises(TraceRangeError):
        ctx.trace(ctx.trace.t_max + 1)


def test_periodicity(config, params, ctx):
    T = 2 * np.pi / config.nu
    assert melnikov_full(0.1, ctx) == pytest.approx(melnikov_full(0.1 + T, ctx), abs=1e-8)


def test_half_and_full_forms_agree(config, params, ctx):
    for tau in (0.0, 0.05, 0.4):
        assert melnikov_full(tau, ctx) == pytest.approx(float(melnikov(tau, config, params, context=ctx)),
                                                        abs=1e-8 * abs(2 * ctx.half_integral))


def test_integration_by_parts_oracle(config, params, ctx):
    nu, T, tau = config.nu, ctx.T, 0.07

    def SK(t):
        s, x = ctx.trace(t)
        return h1_terms((float(s), float(x)), config, params)

    def g(t):
        S, K = SK(t)
        return np.cos(nu * (t + tau)) * S - np.sin(nu * (t + tau)) * K

    edges = np.linspace(-T, T, 25)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        body = sum(integrate.quad(g, a, b, epsabs=1e-13, epsrel=1e-11, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))
    bound = lambda t: np.sin(nu * (t + tau)) * SK(t)[0] + np.cos(nu * (t + tau)) * SK(t)[1]
    oracle = bound(T) - bound(-T) - nu * body
    assert melnikov_full(tau, ctx) == pytest.approx(oracle, abs=1e-6 * abs(2 * ctx.half_integral))


def test_truncation_doubling(config, params, ctx):
    doubled = prepare(config, params, truncation_T=2 * ctx.T, trace=ctx.trace)
    assert doubled.half_integral == pytest.approx(ctx.half_integral, rel=1e-3)


def test_truncation_beyond_trace(config, params, ctx):
    with pytest.raises(TraceRangeError):
        prepare(config, params, truncation_T=10 * ctx.trace.t_max, trace=ctx.trace)


def test_sweep_cosine_form(sweep, config):
    assert sweep.C > 0
    assert sweep.rms_residual < 0.02 * sweep.C
    assert abs(np.degrees(sweep.phase)) < 2.0
    assert np.min(np.abs(sweep.zeros - np.pi / (2 * config.nu))) < 2 * np.pi / config.nu / 32
    assert sweep.C == pytest.approx(sweep.half_line_C, rel=1e-6)


def test_sweep_needs_samples(config, params, ctx):
    with pytest.raises(DomainError):
        melnikov_sweep(config, params, n_tau=8, context=ctx)


def test_connection_decay_rate(config, params, ctx):
    from ringlab.equilibria import axis_saddle_data

    assert ctx.trace.decay_rate == pytest.approx(axis_saddle_data(config, params)["plus"]["rate"], rel=5e-3)
