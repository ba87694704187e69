"""Two coaxial vortex rings in a swirling ambient flow.

State is (s1, s2, x1, x2) with s_k = r_k**2 the squared ring radius and
x_k the axial position. Ring strengths are (1, kappa).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate

from . import _fast
from .numerics import (
    DEFAULT_INTEGRATOR,
    DEFAULT_QUAD,
    DomainError,
    IntegratorSpec,
    QuadratureSpec,
    SingularityError,
    _unit_nodes,
    elliptic_K_minus_E,
    sigma_nodes,
)


@lru_cache(maxsize=1)
def core_constant() -> float:
    """Core constant gamma = (1 + ln 2 + int_0^inf e^-t ln t dt) / 2 (~0.558)."""
    head, _ = integrate.quad(lambda t: np.exp(-t) * np.log(t), 0.0, 1.0, epsabs=1e-15, limit=200)
    tail, _ = integrate.quad(lambda t: np.exp(-t) * np.log(t), 1.0, np.inf, epsabs=1e-15, limit=200)
    return 0.5 * (1.0 + np.log(2.0) + head + tail)


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters.

    mutual_sign multiplies the ring-ring induction term in the axial
    equations. -1 (default) is the convention that yields the reference
    equilibria; +1 is the Hamiltonian field whose invariant is
    :func:`hamiltonian`. Omega=None means "use nu of the solved config".
    """

    alpha: float = 5.0
    kappa: float = 1.5
    chi: float = 1000.0
    Omega: float | None = None
    mu: float = 0.0
    a1: float = 0.0
    a2: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    mutual_sign: int = -1
    quad: QuadratureSpec = DEFAULT_QUAD
    gamma_const: float = field(default_factory=core_constant)

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not self.kappa >= 1:
            raise DomainError("kappa must be >= 1")
        if not self.chi > 8:
            raise DomainError("chi must exceed 8")
        if self.Omega is not None and not self.Omega > 0:
            raise DomainError("Omega must be positive")
        if self.mutual_sign not in (-1, 1):
            raise DomainError("mutual_sign must be +1 or -1")

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    @property
    def strengths(self):
        return (1.0, self.kappa)


@dataclass(frozen=True)
class RingPairState:
    s1: float
    s2: float
    x1: float
    x2: float

    def __post_init__(self):
        if self.s1 < 0 or self.s2 < 0:
            raise DomainError("squared radii must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.x1, self.x2], dtype=float)

    @classmethod
    def from_array(cls, y) -> "RingPairState":
        return cls(*map(float, y))


def _coerce(state):
    if isinstance(state, RingPairState):
        return state.as_array()
    return np.asarray(state, dtype=float)


def pair_kernels(r1, r2, d, quad: QuadratureSpec = DEFAULT_QUAD):
    """(I0, Ic) = int Delta^{-3/2}, int cos2s Delta^{-3/2} over [0, pi/2]."""
    c, _, delta, w = sigma_nodes(r1, r2, d, quad)
    p = delta ** -1.5 * w
    i0 = p.sum(axis=-1)
    ic = (c * p).sum(axis=-1)
    return i0, ic


def _self_term(r, kappa_k, p: ModelParams):
    return kappa_k * (np.log(p.chi * r) - p.gamma_const) / (2.0 * r)


def _swirl(s, p: ModelParams):
    return -p.alpha * (1.0 + p.a1 * s + p.a2 * s * s)


def packed(params: ModelParams):
    """Parameter vector and quadrature nodes for the compiled kernels."""
    q = params.quad
    P = np.array([
        params.alpha, params.kappa, params.chi, params.gamma_const, params.a1, params.a2,
        float(params.mutual_sign), q.split_threshold, 0.0 if q.closed_form else 1.0,
    ])
    u, wu = _unit_nodes(q.order)
    return P, u, wu


def ring_velocity(state, params: ModelParams) -> np.ndarray:
    """Rates (ds1, ds2, dx1, dx2) of the ring pair.

    ds1 = 4 kappa r1 r2 (x1 - x2) Ic, ds2 = -ds1 / kappa, and
    dx_k = swirl + self-induction + mutual_sign * (induction of the other ring).
    """
    y = _coerce(state)
    P, u, wu = packed(params)
    out = np.empty(4)
    if not _fast.ring_rhs(y, P, u, wu, out):
        raise SingularityError("ring radius is zero or rings coincide")
    return out


def ring_velocity_quadrature(state, params: ModelParams) -> np.ndarray:
    """Same field as :func:`ring_velocity`, evaluated with numpy quadrature."""
    s1, s2, x1, x2 = _coerce(state)
    if s1 <= 0 or s2 <= 0:
        raise SingularityError("ring radius is zero")
    r1, r2 = np.sqrt(s1), np.sqrt(s2)
    d = x1 - x2
    k = params.kappa
    i0, ic = pair_kernels(r1, r2, d, params.quad)
    i1 = r2 * i0 - r1 * ic
    i2 = r1 * i0 - r2 * ic
    g = 4.0 * r1 * r2 * d * ic
    m = params.mutual_sign
    return np.array([
        k * g,
        -g,
        _swirl(s1, params) + _self_term(r1, 1.0, params) + m * 2.0 * k * r2 * i1,
        _swirl(s2, params) + _self_term(r2, k, params) + m * 2.0 * r1 * i2,
    ])


def interaction_energy(r1, r2, d):
    """2 (r+ + r-) [K(lam) - E(lam)] with r+- the extreme ring separations."""
    rp = np.sqrt((r1 + r2) ** 2 + d * d)
    rm = np.sqrt((r1 - r2) ** 2 + d * d)
    return 2.0 * (rp + rm) * elliptic_K_minus_E((rp - rm) / (rp + rm))


def hamiltonian(state, params: ModelParams) -> float:
    """Ring-pair Hamiltonian with swirl (closed elliptic form).

    The printed field (mutual_sign=+1) is its symplectic gradient.
    """
    s1, s2, x1, x2 = _coerce(state)
    if s1 <= 0 or s2 <= 0:
        raise SingularityError("ring radius is zero")
    r1, r2 = np.sqrt(s1), np.sqrt(s2)
    d = x1 - x2
    if (r1 - r2) ** 2 + d * d < params.quad.split_threshold:
        raise SingularityError("coincident rings")
    k = params.kappa
    g = params.gamma_const
    swirl = 0.0
    for kk, s in ((1.0, s1), (k, s2)):
        swirl += kk * (s + params.a1 * s * s / 2.0 + params.a2 * s ** 3 / 3.0)
    selfe = r1 * (np.log(params.chi * r1) - 1.0 - g) + k * k * r2 * (np.log(params.chi * r2) - 1.0 - g)
    return float(params.alpha * swirl - selfe - k * interaction_energy(r1, r2, d))


def invariant_G(state, params: ModelParams) -> float:
    """Casimir-like invariant s1 + kappa s2."""
    s1, s2, _, _ = _coerce(state)
    return float(s1 + params.kappa * s2)


@dataclass
class RingTrajectory:
    t: np.ndarray
    states: np.ndarray
    H_drift: float
    G_drift: float
    aborted: bool = False
    abort_time: float | None = None
    reason: str = ""

    def at(self, i) -> RingPairState:
        return RingPairState.from_array(self.states[i])


def _hamiltonian_many(states, params: ModelParams) -> np.ndarray:
    """hamiltonian() over rows of ``states``; NaN where it is singular."""
    s1, s2, x1, x2 = np.asarray(states, dtype=float).T
    out = np.full(s1.shape, np.nan)
    r1, r2 = np.sqrt(np.maximum(s1, 0.0)), np.sqrt(np.maximum(s2, 0.0))
    d = x1 - x2
    ok = (s1 > 0) & (s2 > 0) & ((r1 - r2) ** 2 + d * d >= params.quad.split_threshold)
    if not np.any(ok):
        return out
    r1, r2, d, s1, s2 = r1[ok], r2[ok], d[ok], s1[ok], s2[ok]
    k, g = params.kappa, params.gamma_const
    swirl = sum(kk * (s + params.a1 * s * s / 2.0 + params.a2 * s ** 3 / 3.0) for kk, s in ((1.0, s1), (k, s2)))
    selfe = r1 * (np.log(params.chi * r1) - 1.0 - g) + k * k * r2 * (np.log(params.chi * r2) - 1.0 - g)
    out[ok] = params.alpha * swirl - selfe - k * interaction_energy(r1, r2, d)
    return out


def _rel_drift(values) -> float:
    values = np.asarray(values, dtype=float)
    ref = abs(values[0]) if values[0] != 0 else 1.0
    return float(np.max(np.abs(values - values[0])) / ref)


def integrate_rings(
    state0,
    params: ModelParams,
    t_span: tuple[float, float],
    spec: IntegratorSpec = DEFAULT_INTEGRATOR,
    sample_every: int = 1,
    diagnostics: bool = True,
) -> RingTrajectory:
    """RK4 ring trajectory with relative H and G drift diagnostics.

    H drift is measured on the stored samples (skipped, reported as NaN, when
    ``diagnostics`` is false).
    """
    y0 = _coerce(state0)
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise DomainError("t1 must exceed t0")
    n = max(1, int(np.ceil((t1 - t0) / spec.step - 1e-9)))
    h = (t1 - t0) / n
    P, u, wu = packed(params)
    samples = np.full((n // sample_every + 1, 4), np.nan)
    done = _fast.ring_rk4(y0, t0, h, n, sample_every, P, u, wu, samples)
    t = t0 + h * sample_every * np.arange(samples.shape[0])
    aborted = done < n
    keep = done // sample_every + 1
    t, states = t[:keep], samples[:keep]
    H = _hamiltonian_many(states, params) if diagnostics else [np.nan]
    G = states[:, 0] + params.kappa * states[:, 1]
    abort_time = t0 + done * h if aborted else None
    reason = "ring radius vanished or rings collided" if aborted else ""
    return RingTrajectory(t, states, _rel_drift(H), _rel_drift(G), aborted, abort_time, reason)


def azimuth_history(theta0: float, t, s_history, params: ModelParams) -> np.ndarray:
    """theta(t) = theta0 + Omega int_0^t (1 + b1 s + b2 s^2) dt (trapezoidal)."""
    from scipy.integrate import cumulative_trapezoid

    if params.Omega is None:
        raise DomainError("Omega must be set to reconstruct the azimuth")
    s = np.asarray(s_history, dtype=float)
    rate = params.Omega * (1.0 + params.b1 * s + params.b2 * s * s)
    return theta0 + cumulative_trapezoid(rate, np.asarray(t, dtype=float), initial=0.0)
