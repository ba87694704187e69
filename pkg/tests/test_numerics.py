import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from ringlab.numerics import (
    ConvergenceError,
    DomainError,
    FitError,
    IntegratorSpec,
    QuadratureSpec,
    SingularityError,
    elliptic_KE,
    elliptic_K_minus_E,
    find_root,
    fit_cosine,
    rk4_integrate,
    sigma_integral,
    sigma_kernel,
)


def _KE_oracle(lam):
    K = integrate.quad(lambda t: (1 - lam**2 * np.sin(t) ** 2) ** -0.5, 0, np.pi / 2, epsabs=1e-15, epsrel=1e-13)[0]
    E = integrate.quad(lambda t: (1 - lam**2 * np.sin(t) ** 2) ** 0.5, 0, np.pi / 2, epsabs=1e-15, epsrel=1e-13)[0]
    return K, E


def test_elliptic_zero_modulus():
    K, E = elliptic_KE(0.0)
    assert K == pytest.approx(np.pi / 2, abs=1e-15)
    assert E == pytest.approx(np.pi / 2, abs=1e-15)


def test_elliptic_half_matches_quadrature():
    K, E = elliptic_KE(0.5)
    Ko, Eo = _KE_oracle(0.5)
    assert abs(K - Ko) < 1e-10 and abs(E - Eo) < 1e-10


def test_elliptic_near_one():
    K, E = elliptic_KE(1 - 1e-12)
    assert np.isfinite(K) and K > 10
    assert abs(E - 1.0) < 1e-6


@pytest.mark.parametrize("lam", [-0.1, 1.0, np.nan, 2.0])
def test_elliptic_rejects_bad_modulus(lam):
    with pytest.raises(DomainError):
        elliptic_KE(lam)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.999))
def test_elliptic_against_scipy(lam):
    K, E = elliptic_KE(lam)
    assert K == pytest.approx(special.ellipk(lam**2), rel=1e-12)
    assert E == pytest.approx(special.ellipe(lam**2), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 0.99))
def test_k_minus_e_no_cancellation(lam):
    ref = special.ellipk(lam**2) - special.ellipe(lam**2)
    # small modulus: K - E ~ pi lam^2 / 4
    if lam < 1e-3:
        ref = np.pi * lam**2 / 4 * (1 + 3 * lam**2 / 8)
    assert elliptic_K_minus_E(lam) == pytest.approx(ref, rel=1e-9)


def test_elliptic_vectorised():
    lam = np.array([0.0, 0.3, 0.9])
    K, E = elliptic_KE(lam)
    assert K.shape == (3,)
    assert np.allclose(K, special.ellipk(lam**2), rtol=1e-13)


def test_sigma_integral_constant():
    # unit integrand: Delta is ignored
    val = sigma_integral(0.5, 0.7, 0.2, lambda c, s2, d: np.ones_like(d))
    assert val == pytest.approx(np.pi / 2, abs=1e-13)


def test_sigma_half_closed_form_matches_quadrature():
    ra, rb, dx = 0.4, 0.9, 0.3
    closed = sigma_kernel(ra, rb, dx, 0.5, "cos2")
    quad = sigma_kernel(ra, rb, dx, 0.5, lambda c, s2: c)
    assert closed == pytest.approx(quad, rel=1e-11)
    # reconstruction from elliptic_KE
    rp, rm = np.hypot(ra + rb, dx), np.hypot(ra - rb, dx)
    K, E = elliptic_KE((rp - rm) / (rp + rm))
    assert closed == pytest.approx((rp + rm) * (K - E) / (2 * ra * rb), rel=1e-12)


@pytest.mark.parametrize("power", [1.5, 2.5])
@pytest.mark.parametrize("geom", [(0.4, 0.9, 0.3), (0.5, 0.5, 0.01), (0.24, 0.97, 0.0)])
def test_sigma_kernel_adaptive_oracle(power, geom):
    ra, rb, dx = geom
    delta = lambda s: (ra - rb) ** 2 + dx**2 + 4 * ra * rb * np.sin(s) ** 2
    ref = integrate.quad(lambda s: np.cos(2 * s) * delta(s) ** -power, 0, np.pi / 2,
                         epsabs=0, epsrel=1e-13, limit=400, points=[0.0])[0]
    assert sigma_kernel(ra, rb, dx, power) == pytest.approx(ref, rel=1e-9)


def test_sigma_kernel_inside_core():
    with pytest.raises(SingularityError):
        sigma_kernel(0.5, 0.5, 0.0, 1.5)


def test_sigma_kernel_bad_power():
    with pytest.raises(DomainError):
        sigma_kernel(0.5, 0.6, 0.1, 1.0)


def test_quadrature_spec_validation():
    with pytest.raises(DomainError):
        QuadratureSpec(order=2)


def test_rk4_constant_field():
    tr = rk4_integrate(lambda t, y: np.zeros_like(y), [1.0, 2.0], 0, 1, IntegratorSpec(0.01))
    assert np.all(tr.y == np.array([1.0, 2.0]))


def test_rk4_exponential():
    tr = rk4_integrate(lambda t, y: y, [1.0], 0, 1, IntegratorSpec(1e-3))
    assert abs(tr.final[0] - np.e) < 1e-8


def _pendulum_drift(h):
    tr = rk4_integrate(lambda t, y: np.array([y[1], -np.sin(y[0])]), [2.0, 0.0], 0, 10, IntegratorSpec(h))
    E = 0.5 * tr.y[:, 1] ** 2 - np.cos(tr.y[:, 0])
    return np.max(np.abs(E - E[0]))


def test_rk4_fourth_order_energy_drift():
    # nonlinear oscillator; the linear one damps energy at h^5 per unit time
    ratio = _pendulum_drift(0.01) / _pendulum_drift(0.005)
    assert 13 < ratio < 20


def test_rk4_stops_on_singularity():
    def fld(t, y):
        if t > 0.5:
            raise SingularityError("boom")
        return np.ones_like(y)

    tr = rk4_integrate(fld, [0.0], 0, 1, IntegratorSpec(0.01))
    assert tr.aborted and tr.abort_time <= 0.51
    assert np.all(np.isfinite(tr.y))


def test_rk4_bad_span():
    with pytest.raises(DomainError):
        rk4_integrate(lambda t, y: y, [1.0], 1, 0)


def test_bisection_sqrt2():
    res = find_root(lambda x: x * x - 2, bracket=(1, 2), tol=1e-14)
    assert abs(res.root - np.sqrt(2)) < 1e-12


def test_bisection_without_sign_change():
    with pytest.raises(ConvergenceError):
        find_root(lambda x: x * x + 1, bracket=(-1, 1))


def test_newton_identity():
    assert abs(find_root(lambda x: x, seed=1.0, method="newton").root) < 1e-12


def test_picard_small_reduced_root(params):
    a, chi, g = params.alpha, params.chi, params.gamma_const
    res = find_root(lambda r: 2 * a * r - (np.log(chi * r) - g), seed=1e-3, method="picard",
                    iteration_map=lambda r: np.exp(2 * a * r + g) / chi, tol=1e-15)
    assert abs(2 * a * res.root - (np.log(chi * res.root) - g)) < 1e-12


def test_picard_divergent_map():
    with pytest.raises(ConvergenceError):
        find_root(None, seed=1.0, method="picard", iteration_map=lambda x: 2 * x + 1, max_iter=50)


def test_fit_cosine_pure():
    tau = np.linspace(0, np.pi, 32, endpoint=False)
    fit = fit_cosine(tau, 3 * np.cos(2 * tau), 2.0)
    assert fit.C == pytest.approx(3.0, abs=1e-12)
    assert abs(fit.phase) < 1e-12 and fit.rms_residual < 1e-12


def test_fit_cosine_with_harmonic():
    tau = np.linspace(0, np.pi, 64, endpoint=False)
    fit = fit_cosine(tau, 3 * np.cos(2 * tau) + 0.01 * np.sin(6 * tau), 2.0)
    assert fit.C == pytest.approx(3.0, abs=1e-10)
    assert fit.rms_residual == pytest.approx(0.01 / np.sqrt(2), rel=1e-8)


def test_fit_cosine_zero():
    tau = np.linspace(0, 1, 10)
    assert fit_cosine(tau, np.zeros(10), 2.0).C == 0.0


def test_fit_cosine_degenerate():
    with pytest.raises(FitError):
        fit_cosine(np.zeros(5), np.ones(5), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.floats(-1.5, 1.5))
def test_fit_cosine_recovers(C, phase):
    tau = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    fit = fit_cosine(tau, C * np.cos(tau + phase), 1.0)
    assert abs(fit.phase) <= np.pi / 2 + 1e-12
    assert np.allclose(fit.C * np.cos(tau + fit.phase), C * np.cos(tau + phase), atol=1e-9)
