"""Passive-particle kinematics in the meridian half-plane.

A particle is an advected ring of zero strength with state (s, x), s = r**2.
Rings are given either as a fixed RingPairState, a callable t -> (s1, s2, x1, x2),
or a RingTrajectory (interpolated).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from . import _fast
from .numerics import (
    DEFAULT_INTEGRATOR,
    ConvergenceError,
    DomainError,
    IntegratorSpec,
    SingularityError,
    elliptic_K_minus_E,
    rk4_integrate,
)
from .ring_dynamics import (
    ModelParams,
    RingPairState,
    RingTrajectory,
    hamiltonian,
    packed,
    ring_velocity,
)

# near-core stop rule on min_k [(r - r_k)^2 + (x - x_k)^2]
CORE_DISTANCE2 = 1e-10


class TraceError(ConvergenceError):
    """A separatrix failed to reconnect; ``partial`` holds what was traced."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class ParticleState:
    s: float
    x: float

    def __post_init__(self):
        if self.s < 0:
            raise DomainError("s must be non-negative")

    def as_array(self):
        return np.array([self.s, self.x], dtype=float)


def _pxy(p):
    if isinstance(p, ParticleState):
        return p.s, p.x
    s, x = p
    return float(s), float(x)


def _ring_array(rings, t=0.0):
    if isinstance(rings, RingPairState):
        return rings.as_array()
    if callable(rings):
        return np.asarray(rings(t), dtype=float)
    return np.asarray(rings, dtype=float)


def equilibrium_rings(config) -> np.ndarray:
    return np.array([config.s1_hat, config.s2_hat, config.xi_hat, config.xi_hat])


# -- field and Hamiltonians -----------------------------------------------

def particle_velocity(p, rings, params: ModelParams, t: float = 0.0) -> np.ndarray:
    """(ds, dx) of a passive particle.

    ds = 4 r sum_k kappa_k r_k (x - x_k) int cos2s / Delta_k^{3/2}
    dx = -alpha (1 + a1 s + a2 s^2) + 2 sum_k kappa_k r_k int (r_k - r cos2s) / Delta_k^{3/2}
    On the axis the analytic limit is used (ds = 0 exactly).
    """
    s, x = _pxy(p)
    ring = _ring_array(rings, t)
    P, u, wu = packed(params)
    ds, dx, st = _fast.particle_rhs(s, x, ring, P, u, wu)
    if st != _fast.OK:
        raise SingularityError("particle inside a ring core")
    return np.array([ds, dx])


def _ring_energy(r, rk, d):
    rp = np.sqrt((rk + r) ** 2 + d * d)
    rm = np.sqrt((rk - r) ** 2 + d * d)
    return 2.0 * (rp + rm) * elliptic_K_minus_E((rp - rm) / (rp + rm))


def stream_hamiltonian(p, rings=None, params: ModelParams | None = None, variant: str = "full",
                       config=None, t: float = 0.0) -> float:
    """Particle Hamiltonian.

    variant "full": alpha (s + a1 s^2/2 + a2 s^3/3) - 4 r sum kappa_k r_k int cos2s / Delta_k^{1/2}
    with the given rings; "H0": the same with rings at the equilibrium of
    ``config``; "coupled": ring Hamiltonian plus the particle part, for the
    six-dimensional state (rings, particle).
    """
    if params is None:
        raise DomainError("params required")
    s, x = _pxy(p)
    if variant == "H0":
        if config is None:
            raise DomainError("H0 needs an equilibrium config")
        ring = equilibrium_rings(config)
    else:
        ring = _ring_array(rings, t)
    r = np.sqrt(s)
    val = params.alpha * (s + params.a1 * s * s / 2.0 + params.a2 * s ** 3 / 3.0)
    for k, kk in enumerate(params.strengths):
        rk = np.sqrt(ring[k])
        d = x - ring[2 + k]
        if (r - rk) ** 2 + d * d < params.quad.split_threshold:
            raise SingularityError("particle inside a ring core")
        if r > 0:
            val -= kk * _ring_energy(r, rk, d)
    if variant == "coupled":
        val += hamiltonian(ring, params)
    elif variant not in ("full", "H0"):
        raise DomainError(f"unknown Hamiltonian variant {variant!r}")
    return float(val)


# -- advection ------------------------------------------------------------

def ring_interpolant(traj: RingTrajectory, params: ModelParams) -> Callable:
    """Cubic Hermite interpolant of a ring trajectory (slopes from the field)."""
    dy = np.array([ring_velocity(y, params) for y in traj.states])
    spline = CubicHermiteSpline(traj.t, traj.states, dy, axis=0)
    return lambda t: spline(t)


def _near_core(s, x, ring):
    r = np.sqrt(max(s, 0.0))
    for k in range(2):
        if (r - np.sqrt(ring[k])) ** 2 + (x - ring[2 + k]) ** 2 < CORE_DISTANCE2:
            return True
    return False


@dataclass
class ParticleTrajectory:
    t: np.ndarray
    states: np.ndarray
    aborted: bool = False
    reason: str = ""
    rings: np.ndarray | None = None

    @property
    def s(self):
        return self.states[:, 0]

    @property
    def x(self):
        return self.states[:, 1]


def advect_particle(
    p0,
    params: ModelParams,
    t_span: tuple[float, float],
    mode: str = "direct",
    rings=None,
    spec: IntegratorSpec = DEFAULT_INTEGRATOR,
    sample_every: int = 1,
) -> ParticleTrajectory:
    """Advect one particle.

    mode "direct": the ring motion is prescribed by ``rings`` (fixed state,
    callable of t, or RingTrajectory). mode "coupled": ``rings`` is the
    initial ring state and the six-dimensional system is integrated.
    """
    s0, x0 = _pxy(p0)
    P, u, wu = packed(params)

    if mode == "direct":
        if rings is None:
            raise DomainError("direct mode needs a ring source")
        if isinstance(rings, RingTrajectory):
            source = ring_interpolant(rings, params)
        elif callable(rings):
            source = rings
        else:
            fixed = _ring_array(rings)
            source = lambda t: fixed

        def fld(t, y):
            ds, dx, st = _fast.particle_rhs(max(y[0], 0.0), y[1], source(t), P, u, wu)
            if st != _fast.OK:
                raise SingularityError("particle entered a ring core")
            return np.array([ds, dx])

        def stop(t, y):
            return "near core" if _near_core(y[0], y[1], source(t)) else None

        tr = rk4_integrate(fld, [s0, x0], t_span[0], t_span[1], spec, sample_every, stop)
        states = tr.y.copy()
        states[:, 0] = np.maximum(states[:, 0], 0.0)
        return ParticleTrajectory(tr.t, states, tr.aborted, tr.reason)

    if mode == "coupled":
        y0 = np.concatenate([_ring_array(rings), [s0, x0]])
        rout = np.empty(4)

        def fld6(t, y):
            if not _fast.ring_rhs(y[:4], P, u, wu, rout):
                raise SingularityError("rings collided")
            ds, dx, st = _fast.particle_rhs(max(y[4], 0.0), y[5], y[:4], P, u, wu)
            if st != _fast.OK:
                raise SingularityError("particle entered a ring core")
            return np.array([rout[0], rout[1], rout[2], rout[3], ds, dx])

        def stop6(t, y):
            return "near core" if _near_core(y[4], y[5], y[:4]) else None

        tr = rk4_integrate(fld6, y0, t_span[0], t_span[1], spec, sample_every, stop6)
        states = tr.y[:, 4:].copy()
        states[:, 0] = np.maximum(states[:, 0], 0.0)
        return ParticleTrajectory(tr.t, states, tr.aborted, tr.reason, rings=tr.y[:, :4])
    raise DomainError(f"unknown advection mode {mode!r}")


def advect_many(seeds, params: ModelParams, t0: float, duration: float, ring_coeffs=None,
                config=None, spec: IntegratorSpec = DEFAULT_INTEGRATOR, sample_every: int = 1,
                box=(-np.inf, np.inf, np.inf)):
    """Compiled RK4 for a batch of particles.

    ``ring_coeffs`` is the ring-motion vector of :mod:`ringlab._fast`; if
    omitted the rings are held at the equilibrium of ``config``.
    Returns (t, samples[nsamp, n, 2], status[n], stop_step[n]).
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if ring_coeffs is None:
        if config is None:
            raise DomainError("need ring_coeffs or config")
        ring_coeffs = fixed_ring_coeffs(config, params)
    n = max(1, int(np.ceil(duration / spec.step - 1e-9)))
    h = duration / n
    P, u, wu = packed(params)
    nsamp = n // sample_every + 1
    samples = np.empty((nsamp, seeds.shape[0], 2))
    status = np.zeros(seeds.shape[0], dtype=np.int64)
    stop_step = np.zeros(seeds.shape[0], dtype=np.int64)
    _fast.advect_batch(seeds, t0, h, n, sample_every, np.asarray(ring_coeffs, float), P, u, wu,
                       np.asarray(box, dtype=float), samples, status, stop_step)
    t = t0 + h * sample_every * np.arange(nsamp)
    return t, samples, status, stop_step


def fixed_ring_coeffs(config, params: ModelParams) -> np.ndarray:
    return np.array([config.s1_hat, config.s2_hat, config.xi_hat, 0.0, 1.0, 1.0, 0.0, 0.0, params.kappa])


# -- separatrices ---------------------------------------------------------

@dataclass
class SeparatrixTrace:
    branch: str
    t: np.ndarray
    s: np.ndarray
    x: np.ndarray
    decay_rate: float = float("nan")
    decay_r2: float = float("nan")
    level: float = float("nan")
    level_spread: float = float("nan")
    miss_distance: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def samples(self):
        return np.column_stack([self.t, self.s, self.x])


def _loglinear(t, y):
    """Fit log|y| = c + k t; returns (k, R^2)."""
    ly = np.log(np.abs(y))
    A = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    return float(coef[1]), 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")


def _fixed_field(params, ring):
    P, u, wu = packed(params)

    def fld(t, y):
        ds, dx, st = _fast.particle_rhs(max(y[0], 0.0), y[1], ring, P, u, wu)
        if st != _fast.OK:
            raise SingularityError("particle entered a ring core")
        return np.array([ds, dx])

    return fld


def _level(config, params, s, x):
    return np.array([stream_hamiltonian((si, xi), params=params, variant="H0", config=config)
                     for si, xi in zip(s, x)])


def trace_upper_branch(config, params: ModelParams, offset: float = 1e-7,
                       spec: IntegratorSpec = DEFAULT_INTEGRATOR, tol: float = 1e-5,
                       max_time: float | None = None) -> SeparatrixTrace:
    """Unstable manifold of (0, x+) traced until it comes within ``tol`` of (0, x-).

    Time is shifted so that t = 0 at the crossing of x = xi_hat.
    """
    from .equilibria import axis_saddle_data

    ring = equilibrium_rings(config)
    sad = axis_saddle_data(config, params)
    v = sad["plus"]["unstable_vector"]
    p0 = np.array([0.0, config.x_plus]) + offset * v
    rate = sad["plus"]["rate"]
    if max_time is None:
        max_time = 60.0 / rate
    fld = _fixed_field(params, ring)
    target = np.array([0.0, config.x_minus])
    state = {"closest": np.inf, "seen": False}

    def stop(t, y):
        dist = np.hypot(y[0] - target[0], y[1] - target[1])
        state["closest"] = min(state["closest"], dist)
        if dist < tol:
            return "reconnected"
        if y[1] < config.x_minus - 10 * config.eta or y[0] > 100 * config.s2_hat:
            return "left the bubble"
        return None

    tr = rk4_integrate(fld, p0, 0.0, max_time, spec, 1, stop)
    s, x, t = np.maximum(tr.y[:, 0], 0.0), tr.y[:, 1], tr.t
    if tr.reason != "reconnected":
        part = SeparatrixTrace("upper", t, s, x, miss_distance=state["closest"])
        raise TraceError(f"upper branch did not reconnect ({tr.reason or 'max time'})", part)
    i = np.nonzero(x < config.xi_hat)[0][0]
    # linear interpolation of the crossing is refined with one Hermite step
    f0, f1 = x[i - 1] - config.xi_hat, x[i] - config.xi_hat
    tc = t[i - 1] + (t[i] - t[i - 1]) * f0 / (f0 - f1)
    t = t - tc
    trace = SeparatrixTrace("upper", t, s, x, miss_distance=float(np.hypot(s[-1], x[-1] - config.x_minus)))
    lev = _level(config, params, s[:: max(1, len(s) // 2000)], x[:: max(1, len(s) // 2000)])
    trace.level = 0.0
    trace.level_spread = float(np.max(np.abs(lev)))
    trace.decay_rate, trace.decay_r2, trace.extra = _decay_fits(t, s, x, config)
    return trace


def _decay_fits(t, s, x, config):
    smax = s.max()
    fits = {}
    lead = (t < 0) & (s < 1e-2 * smax) & (s > 1e-6 * smax)
    tail = (t > 0) & (s < 1e-2 * smax) & (s > 1e-6 * smax)
    k_lead, r2_lead = _loglinear(t[lead], s[lead])
    k_tail, r2_tail = _loglinear(t[tail], s[tail])
    fits["s_leading"] = (k_lead, r2_lead)
    fits["s_trailing"] = (-k_tail, r2_tail)
    xl = (t < 0) & (s < 1e-2 * smax) & (s > 1e-6 * smax)
    xt = (t > 0) & (s < 1e-2 * smax) & (s > 1e-6 * smax)
    fits["x_leading"] = _loglinear(t[xl], x[xl] - config.x_plus)
    fits["x_trailing"] = tuple(np.array(_loglinear(t[xt], x[xt] - config.x_minus)) * np.array([-1, 1]))
    rates = [v[0] for v in fits.values()]
    r2 = [v[1] for v in fits.values()]
    return float(np.mean(rates)), float(np.min(r2)), fits


def symmetry_residual(trace: SeparatrixTrace, xi: float, n: int = 4001) -> float:
    """max deviation of a t=0-centred branch from the mirror symmetry about x = xi.

    Compares s(t) with s(-t) and x(t) + x(-t) with 2 xi on the common window.
    """
    span = min(-trace.t[0], trace.t[-1])
    if not span > 0:
        raise DomainError("trace does not straddle t = 0")
    tt = np.linspace(-span, span, n)
    S = CubicSpline(trace.t, trace.s)
    X = CubicSpline(trace.t, trace.x)
    return float(max(np.max(np.abs(S(tt) - S(-tt))), np.max(np.abs(X(tt) + X(-tt) - 2 * xi))))


def trace_lower_branch(config, params: ModelParams, spec: IntegratorSpec = DEFAULT_INTEGRATOR,
                       tol: float = 1e-5) -> SeparatrixTrace:
    """Axis heteroclinic orbit from x- to x+ with x(0) = xi_hat."""
    ring = equilibrium_rings(config)
    P, u, wu = packed(params)

    def axial(sign):
        def f(t, y):
            _, dx, st = _fast.particle_rhs(0.0, y[0], ring, P, u, wu)
            return np.array([sign * dx])
        return f

    out = []
    for sign, end in ((1.0, config.x_plus), (-1.0, config.x_minus)):
        stop = (lambda t, y, end=end: "reached" if abs(y[0] - end) < tol else None)
        tr = rk4_integrate(axial(sign), [config.xi_hat], 0.0, 1e3, IntegratorSpec(spec.step, 1e4), 1, stop)
        out.append((sign * tr.t, tr.y[:, 0]))
    (tf, xf), (tb, xb) = out
    t = np.concatenate([tb[::-1], tf[1:]])
    x = np.concatenate([xb[::-1], xf[1:]])
    tail = t > 0
    k, r2 = _loglinear(t[tail][-len(t[tail]) // 3:], (x[tail] - config.x_plus)[-len(t[tail]) // 3:])
    return SeparatrixTrace("lower", t, np.zeros_like(t), x, decay_rate=-k, decay_r2=r2, level=0.0, level_spread=0.0)


def trace_homoclinic(config, params: ModelParams, offset: float = 1e-7,
                     spec: IntegratorSpec = DEFAULT_INTEGRATOR, tol: float = 1e-4,
                     max_time: float = 50.0) -> list[SeparatrixTrace]:
    """The two homoclinic loops of the interior saddle (s_hat, xi_hat)."""
    from .equilibria import interior_saddle_data

    ring = equilibrium_rings(config)
    q = np.array([config.s_hat, config.xi_hat])
    data = interior_saddle_data(config, params)
    v = data["unstable_vector"]
    fld = _fixed_field(params, ring)
    loops = []
    for sgn in (1.0, -1.0):
        p0 = q + sgn * offset * v
        left = {"far": False}
        scale = max(abs(config.s_hat), config.eta)

        def stop(t, y):
            d = np.hypot((y[0] - q[0]), y[1] - q[1])
            if d > 1e-2 * scale:
                left["far"] = True
            if left["far"] and d < tol * scale:
                return "returned"
            return None

        tr = rk4_integrate(fld, p0, 0.0, max_time, IntegratorSpec(spec.step, max(spec.max_time, max_time)), 1, stop)
        s, x = tr.y[:, 0], tr.y[:, 1]
        name = "homoclinic_plus" if np.mean(s) > config.s_hat else "homoclinic_minus"
        tr_ = SeparatrixTrace(name, tr.t, s, x, miss_distance=float(np.hypot(s[-1] - q[0], x[-1] - q[1])))
        lev0 = stream_hamiltonian(q, params=params, variant="H0", config=config)
        lev = _level(config, params, s[:: max(1, len(s) // 1000)], x[:: max(1, len(s) // 1000)])
        tr_.level = lev0
        tr_.level_spread = float(np.max(np.abs(lev - lev0)))
        tr_.decay_rate = data["rate"]
        if tr.reason != "returned":
            raise TraceError(f"{name} loop did not return to the saddle", tr_)
        loops.append(tr_)
    return loops


def trace_separatrices(config, params: ModelParams, spec: IntegratorSpec = DEFAULT_INTEGRATOR) -> dict:
    """Upper and lower heteroclinic branches plus the two homoclinic loops."""
    out = {"upper": trace_upper_branch(config, params, spec=spec),
           "lower": trace_lower_branch(config, params, spec=spec)}
    for loop in trace_homoclinic(config, params, spec=spec):
        out[loop.branch] = loop
    return out


# -- portraits ------------------------------------------------------------

def _crossing_period(t, s, x, xi):
    """Time between consecutive same-direction crossings of x = xi, or None."""
    f = x - xi
    idx = np.nonzero((f[:-1] < 0) & (f[1:] >= 0))[0]
    if idx.size < 2:
        idx = np.nonzero((f[:-1] > 0) & (f[1:] <= 0))[0]
    if idx.size < 2:
        return None, None
    tc = t[idx] + (t[idx + 1] - t[idx]) * f[idx] / (f[idx] - f[idx + 1])
    return float(tc[1] - tc[0]), int(idx[1] + 1)


@dataclass
class PortraitBundle:
    curves: list
    fixed_points: list
    separatrices: dict
    failures: list


def streamline_portrait(config, params: ModelParams, seeds=None, duration: float | None = None,
                        spec: IntegratorSpec = IntegratorSpec(step=1e-3), n_grid: int = 20,
                        with_separatrices: bool = True) -> PortraitBundle:
    """Fixed-ring streamlines from a seed grid, plus separatrices and fixed points.

    Closed orbits are cut after one revolution (two same-direction crossings
    of x = xi_hat); open streamlines stop at the box [x- - 3 eta, x+ + 3 eta] x [0, 6 s2].
    """
    from .equilibria import classify_fixed_points

    if seeds is None:
        xs = np.linspace(config.x_minus - config.eta, config.x_plus + config.eta, n_grid)
        ss = np.linspace(0.0, 4.0 * config.s2_hat, n_grid + 1)[1:]
        seeds = np.array([(s, x) for s in ss for x in xs])
    seeds = np.asarray(seeds, dtype=float)
    if duration is None:
        sad = classify_fixed_points(config, params)
        duration = 8.0 / max(sad["p_plus"].rate, 1e-12)
    box = (config.x_minus - 3 * config.eta, config.x_plus + 3 * config.eta, 6 * config.s2_hat)
    t, samp, status, stop_step = advect_many(seeds, params, 0.0, duration, config=config, spec=spec, box=box)
    curves, failures = [], []
    for i in range(seeds.shape[0]):
        good = np.isfinite(samp[:, i, 0])
        ti, si, xi_ = t[good], samp[good, i, 0], samp[good, i, 1]
        period, cut = _crossing_period(ti, si, xi_, config.xi_hat)
        if period is not None:
            ti, si, xi_ = ti[: cut + 1], si[: cut + 1], xi_[: cut + 1]
        if status[i] == _fast.CORE:
            failures.append((i, "entered a ring core"))
        curves.append({"seed_id": i, "t": ti, "s": si, "x": xi_, "closed": period is not None,
                       "period": period, "status": int(status[i])})
    seps = {}
    if with_separatrices:
        try:
            seps["upper"] = trace_upper_branch(config, params)
        except TraceError as exc:
            seps["upper"] = exc.partial
            failures.append(("upper", str(exc)))
        try:
            seps["lower"] = trace_lower_branch(config, params)
        except ConvergenceError as exc:
            failures.append(("lower", str(exc)))
        try:
            for loop in trace_homoclinic(config, params):
                seps[loop.branch] = loop
        except TraceError as exc:
            if exc.partial is not None:
                seps[exc.partial.branch] = exc.partial
            failures.append(("homoclinic", str(exc)))
    fps = list(classify_fixed_points(config, params).values())
    return PortraitBundle(curves, fps, seps, failures)
