"""Melnikov function along the upper heteroclinic connection of the bubble.

With H1 = S sin(nu t) + K cos(nu t), the profiles along the unperturbed
connection phi_u(t) = (s_u(t), x_u(t)) are

    Theta1 = dS/ds, Theta2 = dK/ds, Theta3 = dS/dx / (2r), Theta4 = dK/dx / (2r)

and the Melnikov integrand is s_u' dH1/ds + x_u' dH1/dx. Under the reflection
symmetry of the frozen flow (s even, x - xi odd in t) Theta1, Theta4 are even
and Theta2, Theta3 odd, which collapses the full-line integral to

    M(tau) = 2 cos(nu tau) int_0^inf [sin(nu t) F1 + cos(nu t) F2] dt,
    F1 = s' Theta1 + 2 r x' Theta3,  F2 = s' Theta2 + 2 r x' Theta4.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .equilibria import EquilibriumConfig, axis_saddle_data
from .kinematics import _fixed_field, _loglinear, equilibrium_rings
from .numerics import (
    ConvergenceError,
    DomainError,
    IntegratorSpec,
    fit_cosine,
    rk4_integrate,
    sigma_nodes,
)
from .oscillation import s_amplitude_factor
from .ring_dynamics import ModelParams


class TraceRangeError(DomainError):
    """Requested time lies outside the stored connection."""


class TruncationError(ConvergenceError):
    """Discarded tail of the Melnikov integral is too large; increase T."""


@dataclass
class ConnectionTrace:
    """Upper connection phi_u on [-t_max, t_max], time-centred at x = xi."""

    t_lead: np.ndarray
    s_lead: np.ndarray
    x_lead: np.ndarray
    xi: float
    decay_rate: float
    _s: CubicSpline = field(init=False, repr=False)
    _x: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        self._s = CubicSpline(self.t_lead, self.s_lead)
        self._x = CubicSpline(self.t_lead, self.x_lead)

    @property
    def t_max(self) -> float:
        return float(-self.t_lead[0])

    def __call__(self, t):
        """(s, x) at time(s) t; t > 0 from the reflection symmetry."""
        t = np.asarray(t, dtype=float)
        if np.any(np.abs(t) > self.t_max):
            raise TraceRangeError(f"|t| exceeds the traced range {self.t_max:.4g}")
        tl = -np.abs(t)
        s = self._s(tl)
        x = self._x(tl)
        x = np.where(t > 0, 2 * self.xi - x, x)
        return np.maximum(s, 0.0), x


def connection_trace(config: EquilibriumConfig, params: ModelParams, offset: float = 1e-12,
                     step: float = 1e-4) -> ConnectionTrace:
    """Leading half of the upper connection from (0, x+) to the plane x = xi."""
    ring = equilibrium_rings(config)
    sad = axis_saddle_data(config, params)["plus"]
    p0 = np.array([0.0, config.x_plus]) + offset * sad["unstable_vector"]
    fld = _fixed_field(params, ring)
    stop = lambda t, y: "crossed" if y[1] < config.xi_hat else None
    tr = rk4_integrate(fld, p0, 0.0, 200.0 / sad["rate"], IntegratorSpec(step), 1, stop)
    if tr.reason != "crossed":
        raise ConvergenceError("upper connection did not reach the ring plane")
    t, s, x = tr.t, tr.y[:, 0], tr.y[:, 1]
    f0, f1 = x[-2] - config.xi_hat, x[-1] - config.xi_hat
    tc = t[-2] + (t[-1] - t[-2]) * f0 / (f0 - f1)
    t = t - tc
    # the last sample lies just past the plane; reflect the crossing exactly
    keep = t < 0
    t, s, x = t[keep], s[keep], x[keep]
    smax = s.max()
    tail = (s < 1e-2 * smax) & (s > 1e-9 * smax)
    rate, _ = _loglinear(t[tail], s[tail])
    return ConnectionTrace(np.r_[t, 0.0], np.r_[s, _s_at_plane(t, s)], np.r_[x, config.xi_hat],
                           config.xi_hat, rate)


def _s_at_plane(t, s):
    # s is even in t: fit a quadratic in t^2 through the last samples
    tt, ss = t[-6:], s[-6:]
    coef = np.polyfit(tt * tt, ss, 2)
    return float(np.polyval(coef, 0.0))


def _ring_parts(r, d, rk, spec):
    """J1, J1_r, J1_d, J2, J2_r, J2_d for one ring (arrays over points)."""
    c, s2, D, w = sigma_nodes(r, rk, d, spec)
    r_ = np.asarray(r, dtype=float)[..., None]
    d_ = np.asarray(d, dtype=float)[..., None]
    D15 = D ** -1.5
    D25 = D15 / D
    N = r_ * (r_ - rk) + d_ * d_ + 2 * r_ * rk * s2
    N_r = 2 * r_ - rk + 2 * rk * s2
    D_r = 2 * (r_ - rk) + 4 * rk * s2
    cw = c * w
    J1 = np.sum(cw * N * D15, axis=-1)
    J1_r = np.sum(cw * (N_r * D15 - 1.5 * N * D_r * D25), axis=-1)
    J1_d = np.sum(cw * (2 * d_ * D15 - 3 * d_ * N * D25), axis=-1)
    J2 = np.sum(cw * D15, axis=-1)
    J2_r = np.sum(cw * (-1.5 * D_r * D25), axis=-1)
    J2_d = np.sum(cw * (-3 * d_ * D25), axis=-1)
    return J1, J1_r, J1_d, J2, J2_r, J2_d


def theta_at(s, x, config: EquilibriumConfig, params: ModelParams, factor: float = 1.0):
    """(Theta1, Theta2, Theta3, Theta4) at points (s, x) with s > 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise DomainError("Theta profiles need s > 0")
    r = np.sqrt(s)
    d = np.asarray(x, dtype=float) - config.xi_hat
    th = [np.zeros_like(r) for _ in range(4)]
    coef = (1.0, config.A / config.B)
    for k, (kk, rk, ck) in enumerate(zip(params.strengths, (config.r1_hat, config.r2_hat), coef)):
        sg = -1.0 if k == 0 else 1.0
        J1, J1_r, J1_d, J2, J2_r, J2_d = _ring_parts(r, d, rk, params.quad)
        th[0] += factor * sg / rk * (J1 / r + J1_r)
        th[1] += -2 * d * kk * ck * rk * (J2 / r + J2_r)
        th[2] += factor * sg / rk * J1_d
        th[3] += -2 * kk * ck * rk * (J2 + d * J2_d)
    return tuple(th)


def theta_profiles(t, config: EquilibriumConfig, params: ModelParams, trace: ConnectionTrace | None = None,
                   s_scale: str = "unit"):
    """Theta1..Theta4 along the upper connection at time(s) t."""
    trace = trace or connection_trace(config, params)
    s, x = trace(t)
    return theta_at(s, x, config, params, s_amplitude_factor(config, params, s_scale))


class _Integrand:
    """F1(t), F2(t) along the connection."""

    def __init__(self, config, params, trace, s_scale):
        self.config, self.params, self.trace = config, params, trace
        self.factor = s_amplitude_factor(config, params, s_scale)
        self.fld = _fixed_field(params, equilibrium_rings(config))

    def __call__(self, t):
        s, x = self.trace(t)
        s, x = float(s), float(x)
        if s <= 0:
            return 0.0, 0.0
        ds, dx = self.fld(0.0, np.array([s, x]))
        th = theta_at(s, x, self.config, self.params, self.factor)
        r2 = 2 * np.sqrt(s)
        f1 = ds * th[0] + r2 * dx * th[2]
        f2 = ds * th[1] + r2 * dx * th[3]
        return float(f1), float(f2)


def _quad(fn, a, b, nu):
    # subdivide at the oscillation scale so the adaptive rule resolves both
    # the exponential decay and the nu-oscillation
    edges = np.linspace(a, b, max(2, int(np.ceil(abs(b - a) * nu / np.pi)) + 1))
    tot = 0.0
    with warnings.catch_warnings():
        # roundoff warnings near machine precision are expected on the decaying tails
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            v, _ = integrate.quad(fn, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)
            tot += v
    return tot


@dataclass
class MelnikovContext:
    config: EquilibriumConfig
    params: ModelParams
    trace: ConnectionTrace
    T: float
    half_integral: float
    tail_estimate: float
    F: _Integrand


def prepare(config: EquilibriumConfig, params: ModelParams, truncation_T: float | None = None,
            trace: ConnectionTrace | None = None, s_scale: str = "unit",
            tail_tol: float = 1e-3) -> MelnikovContext:
    """Trace, truncation window and the half-line integral of the cosine form."""
    trace = trace or connection_trace(config, params)
    T = 12.0 / trace.decay_rate if truncation_T is None else float(truncation_T)
    if T > trace.t_max:
        raise TraceRangeError(f"truncation T={T:.4g} beyond traced range {trace.t_max:.4g}")
    F = _Integrand(config, params, trace, s_scale)
    nu = config.nu

    def g(t):
        f1, f2 = F(t)
        return np.sin(nu * t) * f1 + np.cos(nu * t) * f2

    half = _quad(g, 0.0, T, nu)
    f1, f2 = F(T)
    tail = 2 * (abs(f1) + abs(f2)) / trace.decay_rate
    if tail > tail_tol * abs(2 * half):
        raise TruncationError(f"tail {tail:.3e} exceeds {tail_tol:g} of |C|; increase truncation_T")
    return MelnikovContext(config, params, trace, T, half, tail, F)


def melnikov(tau, config: EquilibriumConfig, params: ModelParams, truncation_T: float | None = None,
             context: MelnikovContext | None = None):
    """M(tau) from the half-line cosine form."""
    ctx = context or prepare(config, params, truncation_T)
    return 2.0 * np.cos(config.nu * np.asarray(tau, dtype=float)) * ctx.half_integral


def melnikov_full(tau: float, ctx: MelnikovContext) -> float:
    """M(tau) as the full-line integral of s' dH1/ds + x' dH1/dx at time t + tau."""
    nu = ctx.config.nu
    F = ctx.F

    def g(t):
        f1, f2 = F(t)
        return np.sin(nu * (t + tau)) * f1 + np.cos(nu * (t + tau)) * f2

    return _quad(g, -ctx.T, ctx.T, nu)


@dataclass
class MelnikovResult:
    tau_grid: np.ndarray
    values: np.ndarray
    C: float
    phase: float
    rms_residual: float
    truncation_T: float
    tail_estimate: float
    half_line_C: float = float("nan")
    form_gap: float = float("nan")
    zeros: np.ndarray = field(default_factory=lambda: np.empty(0))
    decay_rate: float = float("nan")


def melnikov_sweep(config: EquilibriumConfig, params: ModelParams, n_tau: int = 32,
                   truncation_T: float | None = None, context: MelnikovContext | None = None) -> MelnikovResult:
    """Sample the full-line M over one period 2 pi / nu and fit C cos(nu tau + phase)."""
    if n_tau < 16:
        raise DomainError("n_tau must be at least 16")
    ctx = context or prepare(config, params, truncation_T)
    nu = config.nu
    tau = np.arange(n_tau) * (2 * np.pi / nu) / n_tau
    vals = np.array([melnikov_full(tt, ctx) for tt in tau])
    fit = fit_cosine(tau, vals, nu)
    half_C = 2.0 * ctx.half_integral
    gap = float(np.max(np.abs(vals - melnikov(tau, config, params, context=ctx))) / abs(half_C))
    if fit.rms_residual > 0.05 * abs(fit.C):
        warnings.warn("Melnikov samples deviate from a pure cosine by more than 5%", RuntimeWarning)
    if fit.C <= 0:
        warnings.warn("Melnikov amplitude C is not positive", RuntimeWarning)
    # zeros of C cos(nu tau + phase) in [0, 2 pi / nu)
    zeros = ((np.pi / 2 - fit.phase) + np.pi * np.arange(3)) / nu
    zeros = np.sort(np.mod(zeros, 2 * np.pi / nu))
    zeros = np.unique(np.round(zeros, 12))
    return MelnikovResult(tau, vals, fit.C, fit.phase, fit.rms_residual, ctx.T, ctx.tail_estimate,
                          half_C, gap, zeros, ctx.trace.decay_rate)
