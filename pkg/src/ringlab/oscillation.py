"""Small ring oscillations about a stationary configuration.

Ring motion to first order in the amplitude mu:

    s1 = s1_hat + mu f sin(nu t),  s2 = s2_hat - (mu f / kappa) sin(nu t)
    x1 = xi + mu cos(nu t),        x2 = xi + mu (A/B) cos(nu t)

f is the s-amplitude factor. f = 1 ("unit") treats mu as the common
amplitude of all four components; f = a (1 - A/B) / nu ("linear"), with
a = d(ds1/dt)/dx1, is the factor the linearized ring equations actually
give for the x1 amplitude mu.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import _fast
from .equilibria import EquilibriumConfig, NoStagnationError, ring_jacobian, stagnation_offset
from .numerics import (
    ConvergenceError,
    DomainError,
    IntegratorSpec,
    SingularityError,
    elliptic_K_minus_E,
    find_root,
)
from .ring_dynamics import ModelParams, RingPairState, integrate_rings, ring_velocity

MODES = ("analytic", "integrated")
S_SCALES = ("unit", "linear")


@dataclass(frozen=True)
class OscillationSpec:
    mu: float = 0.0
    mode: str = "analytic"
    phase: float = 0.0
    s_scale: str = "unit"

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        if self.s_scale not in S_SCALES:
            raise DomainError(f"s_scale must be one of {S_SCALES}")
        if not np.isfinite(self.mu):
            raise DomainError("mu must be finite")


def check_amplitude(mu: float, config: EquilibriumConfig) -> None:
    if abs(mu) > config.eps_star:
        raise DomainError(f"|mu|={abs(mu):.3g} exceeds the amplitude bound {config.eps_star:.3g}")


def s_amplitude_factor(config: EquilibriumConfig, params: ModelParams, s_scale: str = "unit") -> float:
    if s_scale == "unit":
        return 1.0
    if s_scale != "linear":
        raise DomainError(f"unknown s_scale {s_scale!r}")
    J = ring_jacobian(config, params).matrix
    return float(J[0, 2] * (1.0 - config.A / config.B) / config.nu)


def motion_coefficients(config: EquilibriumConfig, params: ModelParams, spec: OscillationSpec) -> np.ndarray:
    """Ring-motion vector for the compiled kernels (analytic expansion only)."""
    check_amplitude(spec.mu, config)
    f = s_amplitude_factor(config, params, spec.s_scale)
    return np.array([config.s1_hat, config.s2_hat, config.xi_hat, spec.mu, f, config.nu,
                     config.A / config.B, spec.phase, params.kappa])


# -- center manifold ------------------------------------------------------

@dataclass
class CenterOrbit:
    seed: RingPairState
    period: float
    psi_ratio: float
    closure: float
    drift: float
    iterations: int
    t: np.ndarray
    states: np.ndarray


def _upward_crossings(t, y):
    idx = np.nonzero((y[:-1] < 0) & (y[1:] >= 0))[0]
    return t[idx] - y[idx] * (t[idx + 1] - t[idx]) / (y[idx + 1] - y[idx])


def _trial_orbit(psi2, config, params, mu, step, span):
    y0 = [config.s1_hat, config.s2_hat, config.xi_hat + mu, config.xi_hat + psi2]
    return integrate_rings(y0, params, (0.0, span), IntegratorSpec(step), diagnostics=False)


def _orbit_period(tr, config):
    t = tr.t
    d = tr.states[:, 2] - tr.states[:, 3]
    c = _upward_crossings(t, d - 0.5 * (d.max() + d.min()))
    if c.size < 2:
        raise ConvergenceError("ring orbit did not complete a period")
    return float(c[1] - c[0])


def center_manifold_seed(config: EquilibriumConfig, params: ModelParams, mu: float,
                         step: float = 1e-4, tol: float = 1e-11, max_iter: int = 200,
                         window: float = 0.5) -> CenterOrbit:
    """Initial ring state on (approximately) the center manifold.

    s1, s2 start at equilibrium and x1 at xi + mu; x2 - xi is bisected in
    (A/B) mu (1 +- window) until the mean axial offset of the pair over one
    period vanishes, i.e. the neutral translation mode is not excited. The
    orbit still drifts axially at O(mu^2) per period (the pair as a whole
    translates), so closure is reported after removing that common drift.
    """
    check_amplitude(mu, config)
    if mu == 0:
        raise DomainError("mu must be nonzero")
    ratio = config.A / config.B
    T0 = 2 * np.pi / config.nu
    span = 2.5 * T0

    def offset(psi2):
        tr = _trial_orbit(psi2, config, params, mu, step, span)
        if tr.aborted:
            raise SingularityError("trial ring orbit hit a singularity")
        T = _orbit_period(tr, config)
        n = int(round(T / (tr.t[1] - tr.t[0])))
        xs = tr.states[:n, 2] + tr.states[:n, 3] - 2 * config.xi_hat
        return float(np.mean(xs)) / mu

    lo, hi = sorted((ratio * mu * (1 - window), ratio * mu * (1 + window)))
    flo, fhi = offset(lo), offset(hi)
    if np.sign(flo) == np.sign(fhi):
        raise ConvergenceError("center-manifold window exhausted without a sign change",
                               [(lo, flo), (hi, fhi)])
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        fm = offset(mid)
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
        if hi - lo <= tol * abs(mu):
            break
    psi2 = 0.5 * (lo + hi)
    tr = _trial_orbit(psi2, config, params, mu, step, span)
    T = _orbit_period(tr, config)
    n = int(round(T / (tr.t[1] - tr.t[0])))
    y = tr.states
    drift = 0.5 * ((y[n, 2] - y[0, 2]) + (y[n, 3] - y[0, 3]))
    gap = y[n] - y[0]
    gap[2:] -= drift
    scale = y[: n + 1].std(axis=0)
    scale[scale == 0] = 1.0
    closure = float(np.linalg.norm(gap / scale))
    seed = RingPairState.from_array(y[0])
    return CenterOrbit(seed, T, psi2 / mu, closure, float(drift), it, tr.t, tr.states)


@lru_cache(maxsize=16)
def _integrated_cache(config_items, params, mu, step, t_end):
    config = EquilibriumConfig(**dict(config_items))
    orbit = center_manifold_seed(config, params, mu, step=step)
    tr = integrate_rings(orbit.seed, params, (0.0, t_end), IntegratorSpec(step), diagnostics=False)
    slopes = np.array([ring_velocity(y, params) for y in tr.states])
    return CubicHermiteSpline(tr.t, tr.states, slopes, axis=0)


def ring_motion(t, config: EquilibriumConfig, params: ModelParams, spec: OscillationSpec,
                step: float = 1e-4):
    """Ring state(s) at time(s) t: RingPairState for scalar t, (n, 4) array otherwise."""
    check_amplitude(spec.mu, config)
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    if spec.mode == "analytic" or spec.mu == 0:
        R = motion_coefficients(config, params, spec)
        out = np.empty((tt.size, 4))
        buf = np.empty(4)
        for i, ti in enumerate(tt):
            _fast.ring_motion(ti, R, buf)
            out[i] = buf
    else:
        shift = spec.phase / config.nu
        ts = tt + shift
        if ts.min() < 0:
            raise DomainError("integrated ring motion is defined for t + phase/nu >= 0")
        t_end = max(float(ts.max()), 2 * np.pi / config.nu) * 1.05 + 10 * step
        t_end = float(np.ceil(t_end * 16) / 16)
        items = tuple(sorted(config.to_dict().items()))
        interp = _integrated_cache(items, params, float(spec.mu), float(step), t_end)
        out = interp(ts)
    if np.ndim(t) == 0:
        return RingPairState.from_array(out[0])
    return out


# -- first-order perturbation Hamiltonian ---------------------------------

def _ring_integrals(r, rk, d):
    """(int cos2s N / Delta^{3/2}, int cos2s / Delta^{3/2}) with
    N = r (r - rk) + d^2 + 2 r rk sin^2 s = (Delta + r^2 - rk^2 + d^2) / 2."""
    if r == 0.0:
        return 0.0, 0.0
    _, ic = _fast.kern_agm(r, rk, d)
    rp = np.hypot(r + rk, d)
    rm = np.hypot(r - rk, d)
    half = (rp + rm) * elliptic_K_minus_E((rp - rm) / (rp + rm)) / (2.0 * r * rk)
    return 0.5 * (half + (r * r - rk * rk + d * d) * ic), ic


def h1_terms(p, config: EquilibriumConfig, params: ModelParams, s_scale: str = "unit",
             factor: float | None = None):
    """(S, K) with H1(s, x, t) = S sin(nu t) + K cos(nu t).

    S = 2 r f sum_k (-1)^k / r_k int cos2s N_k / Delta_k^{3/2}
    K = -4 r (x - xi) sum_k kappa_k c_k r_k int cos2s / Delta_k^{3/2},  c = (1, A/B)
    """
    s, x = (p.s, p.x) if hasattr(p, "s") else map(float, p)
    if s < 0:
        raise DomainError("s must be non-negative")
    f = s_amplitude_factor(config, params, s_scale) if factor is None else factor
    r = np.sqrt(s)
    d = x - config.xi_hat
    radii = (config.r1_hat, config.r2_hat)
    coef = (1.0, config.A / config.B)
    S = 0.0
    K = 0.0
    for k, (kk, rk, ck) in enumerate(zip(params.strengths, radii, coef)):
        if (r - rk) ** 2 + d * d < params.quad.split_threshold:
            raise SingularityError("particle inside a ring core")
        j1, j2 = _ring_integrals(r, rk, d)
        S += (-1) ** (k + 1) / rk * j1
        K += kk * ck * rk * j2
    return 2.0 * r * f * S, -4.0 * r * d * K


def h1_perturbation(p, t, config: EquilibriumConfig, params: ModelParams,
                    spec: OscillationSpec | None = None) -> float:
    """First-order (in mu) part of the particle Hamiltonian under the expanded ring motion."""
    spec = spec or OscillationSpec()
    S, K = h1_terms(p, config, params, spec.s_scale)
    arg = config.nu * t + spec.phase
    return float(S * np.sin(arg) + K * np.cos(arg))


# -- oscillating stagnation points ----------------------------------------

@dataclass
class StagnationTrace:
    t: np.ndarray
    x_minus: np.ndarray
    x_plus: np.ndarray
    xi: float = 0.0

    @property
    def asymmetry(self) -> np.ndarray:
        return np.abs((self.x_plus - self.xi) - (self.xi - self.x_minus))


def _axis_speed(x, ring, params):
    v = -params.alpha
    for kk, sk, xk in zip(params.strengths, ring[:2], ring[2:]):
        v += np.pi * kk * sk / (sk + (x - xk) ** 2) ** 1.5
    return v


def stagnation_trace(config: EquilibriumConfig, params: ModelParams, spec: OscillationSpec,
                     t_grid) -> StagnationTrace:
    """Axis stagnation points of the oscillating rings at each time in ``t_grid``."""
    check_amplitude(spec.mu, config)
    t_grid = np.asarray(t_grid, dtype=float)
    if spec.mu == 0:
        _, xp, xm = stagnation_offset(config, params)
        return StagnationTrace(t_grid, np.full(t_grid.shape, xm), np.full(t_grid.shape, xp), config.xi_hat)
    rings = ring_motion(t_grid, config, params, spec)
    xm = np.empty(t_grid.size)
    xp = np.empty(t_grid.size)
    for i, ring in enumerate(np.atleast_2d(rings)):
        f = lambda x: _axis_speed(x, ring, params)
        inner_hi = max(ring[2], ring[3])
        inner_lo = min(ring[2], ring[3])
        far = config.eta * 4 + 1.0
        while f(inner_hi + far) > 0:
            far *= 2
        if f(inner_hi) <= 0 or f(inner_lo) <= 0:
            raise NoStagnationError(f"axial flow not reversed between the rings at t={t_grid[i]:.6g}")
        xp[i] = find_root(f, bracket=(inner_hi, inner_hi + far), tol=1e-14).root
        xm[i] = find_root(f, bracket=(inner_lo - far, inner_lo), tol=1e-14).root
        if not xm[i] < config.xi_hat < xp[i]:
            raise NoStagnationError(f"stagnation ordering lost at t={t_grid[i]:.6g}")
    return StagnationTrace(t_grid, xm, xp, config.xi_hat)
