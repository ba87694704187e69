"""Stroboscopic Poincare map of the meridian-plane particle flow.

Pi(s0, x0) = (s, x)(2 pi / Omega) under the oscillating rings. Omega
defaults to the ring frequency nu, which makes the map autonomous.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _fast
from .equilibria import EquilibriumConfig
from .kinematics import ParticleState, advect_particle, stream_hamiltonian
from .numerics import (
    DEFAULT_INTEGRATOR,
    ConvergenceError,
    DomainError,
    IntegratorSpec,
    SingularityError,
    find_root,
)
from .oscillation import OscillationSpec, check_amplitude, motion_coefficients, ring_motion
from .ring_dynamics import ModelParams, packed

STATUS = {_fast.OK: "ok", _fast.CORE: "core", _fast.ESCAPE: "escape", _fast.NONFINITE: "nonfinite"}


class EscapeError(SingularityError):
    """Particle hit a core or left the domain during one map period."""

    def __init__(self, message, time=None, state=None):
        super().__init__(message)
        self.time = time
        self.state = state


def swirl_rate(config: EquilibriumConfig, params: ModelParams) -> float:
    return float(params.Omega if params.Omega is not None else config.nu)


def map_period(config: EquilibriumConfig, params: ModelParams) -> float:
    return 2.0 * np.pi / swirl_rate(config, params)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("RINGLAB_THREADS", "1")))
    except ValueError:
        return 1


def default_box(config: EquilibriumConfig) -> tuple:
    return (config.x_minus - 5 * config.eta, config.x_plus + 5 * config.eta, 10 * config.s2_hat)


def bubble_height(config: EquilibriumConfig, params: ModelParams) -> float:
    """s where the bubble boundary (level 0 of H0) crosses the ring plane, above the outer ring."""
    h = lambda s: stream_hamiltonian((s, config.xi_hat), params=params, variant="H0", config=config)
    # H0 -> -inf at the core, so any point just outside it brackets from below
    lo = (config.r2_hat * (1 + 1e-3) + 1e-4) ** 2
    hi = 2 * lo
    while h(hi) < 0:
        hi *= 2
        if hi > 1e8 * lo:
            raise ConvergenceError("bubble boundary not found above the outer ring")
    return find_root(h, bracket=(lo, hi), tol=1e-14).root


def default_seeds(config: EquilibriumConfig, params: ModelParams, n: int = 30,
                  core_margin: float = 8.0) -> np.ndarray:
    """n seeds on the ring plane with s in (0, 1.5 s_u(0)).

    Seeds within ``core_margin`` core radii (8 / chi) of a ring are moved
    just outside that distance, on the side away from the ring: the model
    does not resolve motion inside the desingularized core, and the fast
    circulation just outside it needs far smaller steps than the bubble.
    """
    top = 1.5 * bubble_height(config, params)
    r = np.sqrt(top * np.arange(1, n + 1) / (n + 1))
    excl = min(core_margin * 8.0 / params.chi, 0.25 * min(config.r1_hat, config.r2_hat))
    for rk in (config.r1_hat, config.r2_hat):
        near = np.abs(r - rk) < excl
        outward = (r[near] >= rk) | (rk - excl <= 0)
        r[near] = rk + np.where(outward, excl, -excl)
    r = np.unique(r)
    return np.column_stack([r * r, np.full(r.size, config.xi_hat)])


def _steps_per_period(period: float, integrator: IntegratorSpec) -> int:
    return max(1, int(np.ceil(period / integrator.step - 1e-9)))


def _run_batch(seeds, t0, h, nsteps, sample_every, R, params, box):
    seeds = np.ascontiguousarray(np.atleast_2d(seeds), dtype=float)
    P, u, wu = packed(params)
    n = seeds.shape[0]
    nsamp = nsteps // sample_every + 1
    samples = np.empty((nsamp, n, 2))
    status = np.zeros(n, dtype=np.int64)
    stop = np.zeros(n, dtype=np.int64)
    chunks = np.array_split(np.arange(n), min(thread_count(), n))

    def work(idx):
        if idx.size == 0:
            return
        sub = np.empty((nsamp, idx.size, 2))
        st = np.zeros(idx.size, dtype=np.int64)
        sp = np.zeros(idx.size, dtype=np.int64)
        _fast.advect_batch(seeds[idx], t0, h, nsteps, sample_every, R, P, u, wu,
                           np.asarray(box, dtype=float), sub, st, sp)
        samples[:, idx] = sub
        status[idx] = st
        stop[idx] = sp

    if len(chunks) == 1:
        work(chunks[0])
    else:
        with ThreadPoolExecutor(len(chunks)) as ex:
            list(ex.map(work, chunks))
    return samples, status, stop


def iterate_map(points, n_iterations: int, config: EquilibriumConfig, params: ModelParams,
                spec: OscillationSpec, integrator: IntegratorSpec = DEFAULT_INTEGRATOR,
                t0: float = 0.0, box=(-np.inf, np.inf, np.inf)):
    """Iterates of the map for many points: (iterates[n_iter+1, n, 2], status, stop_iterate)."""
    if n_iterations < 1:
        raise DomainError("n_iterations must be >= 1")
    check_amplitude(spec.mu, config)
    period = map_period(config, params)
    m = _steps_per_period(period, integrator)
    h = period / m
    if spec.mode == "analytic" or spec.mu == 0:
        R = motion_coefficients(config, params, spec)
        samples, status, stop = _run_batch(points, t0, h, n_iterations * m, m, R, params, box)
        return samples, status, stop // m
    # integrated ring motion: slow reference path
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full((n_iterations + 1, pts.shape[0], 2), np.nan)
    status = np.zeros(pts.shape[0], dtype=np.int64)
    stop = np.full(pts.shape[0], n_iterations, dtype=np.int64)
    rings = lambda t: ring_motion(t, config, params, spec)
    for i, p in enumerate(pts):
        out[0, i] = p
        cur = p
        for k in range(n_iterations):
            tr = advect_particle(cur, params, (t0 + k * period, t0 + (k + 1) * period), rings=rings,
                                 spec=IntegratorSpec(h), sample_every=m)
            if tr.aborted:
                status[i], stop[i] = _fast.CORE, k
                break
            cur = np.array([tr.s[-1], tr.x[-1]])
            out[k + 1, i] = cur
            if cur[1] < box[0] or cur[1] > box[1] or cur[0] > box[2]:
                status[i], stop[i] = _fast.ESCAPE, k + 1
                break
    return out, status, stop


def poincare_map(p0, config: EquilibriumConfig, params: ModelParams, spec: OscillationSpec,
                 integrator: IntegratorSpec = DEFAULT_INTEGRATOR, t0: float = 0.0) -> ParticleState:
    """One application of the stroboscopic map (period 2 pi / Omega)."""
    p = np.array([p0.s, p0.x]) if isinstance(p0, ParticleState) else np.asarray(p0, dtype=float)
    if p[0] < 0:
        raise DomainError("s must be non-negative")
    it, status, stop = iterate_map(p, 1, config, params, spec, integrator, t0)
    if status[0] != _fast.OK:
        raise EscapeError(f"map aborted ({STATUS[int(status[0])]})", time=t0, state=p)
    return ParticleState(float(it[1, 0, 0]), float(it[1, 0, 1]))


def map_jacobian(p0, config, params, spec, integrator=DEFAULT_INTEGRATOR, h=None) -> np.ndarray:
    """Derivative of the map at p0 by Richardson-extrapolated central differences.

    The map shears strongly near the ring cores, so plain central differences
    need very small steps; extrapolating h and h/2 removes the O(h^2) error.
    """
    p = np.array([p0.s, p0.x]) if isinstance(p0, ParticleState) else np.asarray(p0, dtype=float)
    base = 1e-6 if h is None else h
    hs = base * max(p[0], 1e-2)
    hx = base * max(config.eta, 1e-2)
    pts = []
    for f in (1.0, 0.5):
        pts += [p + [f * hs, 0], p - [f * hs, 0], p + [0, f * hx], p - [0, f * hx]]
    it, status, _ = iterate_map(np.array(pts), 1, config, params, spec, integrator)
    if np.any(status != _fast.OK):
        raise EscapeError("finite-difference stencil left the domain", state=p)
    img = it[1]
    D = [np.column_stack([(img[j] - img[j + 1]) / (2 * f * hs), (img[j + 2] - img[j + 3]) / (2 * f * hx)])
         for j, f in ((0, 1.0), (4, 0.5))]
    return (4 * D[1] - D[0]) / 3


@dataclass
class SectionCloud:
    seeds: np.ndarray
    iterates: np.ndarray
    status: np.ndarray
    escape_index: np.ndarray
    params_snapshot: dict = field(default_factory=dict)

    @property
    def escaped(self) -> np.ndarray:
        return self.status != _fast.OK

    def valid(self, i):
        """In-domain iterates of seed i (the last one kept for escaped seeds)."""
        it = self.iterates[:, i]
        return it[np.all(np.isfinite(it), axis=1)]

    def level_spread(self, config, params) -> np.ndarray:
        """Per seed max |H0 - H0(seed)| over its in-domain iterates."""
        out = np.empty(len(self.seeds))
        for i in range(len(self.seeds)):
            pts = self.valid(i)
            lv = np.array([_safe_level(p, config, params) for p in pts])
            lv = lv[np.isfinite(lv)]
            out[i] = float(np.max(np.abs(lv - lv[0]))) if lv.size else np.nan
        return out

    def rows(self):
        """(seed_id, iterate_index, s, x, escaped) rows in seed order."""
        for i in range(len(self.seeds)):
            pts = self.valid(i)
            for k, (s, x) in enumerate(pts):
                yield i, k, float(s), float(x), bool(self.escaped[i])


def _safe_level(p, config, params):
    try:
        return stream_hamiltonian(p, params=params, variant="H0", config=config)
    except SingularityError:
        return np.nan


def section(seeds, n_iterations: int, config: EquilibriumConfig, params: ModelParams,
            spec: OscillationSpec, integrator: IntegratorSpec = DEFAULT_INTEGRATOR,
            box=None) -> SectionCloud:
    """Iterate every seed n times; escapes and core hits are recorded, not raised."""
    seeds = default_seeds(config, params) if seeds is None else np.atleast_2d(np.asarray(seeds, float))
    if np.any(seeds[:, 0] < 0):
        raise DomainError("seeds must have s >= 0")
    box = default_box(config) if box is None else box
    it, status, stop = iterate_map(seeds, n_iterations, config, params, spec, integrator, box=box)
    it[..., 0] = np.where(np.isfinite(it[..., 0]), np.maximum(it[..., 0], 0.0), it[..., 0])
    # keep only whole-period iterates
    for i in range(seeds.shape[0]):
        if status[i] != _fast.OK:
            it[stop[i] + 1:, i] = np.nan
    outside = (it[..., 1] < box[0]) | (it[..., 1] > box[1]) | (it[..., 0] > box[2])
    it[outside] = np.nan
    snap = {"params": params, "config": config, "oscillation": spec, "integrator": integrator,
            "box": tuple(map(float, box)), "omega": swirl_rate(config, params)}
    return SectionCloud(seeds, it, status, stop, snap)


def _axis_fixed_point(x0, config, params, spec, integrator, tol, max_iter):
    """Fixed point of the axis map by bracketing; Newton is unreliable at the
    trailing point, where the axis is the strongly expanding direction."""

    def g(x):
        it, status, _ = iterate_map(np.array([0.0, x]), 1, config, params, spec, integrator)
        if status[0] != _fast.OK:
            raise ConvergenceError("axis iterate left the domain")
        return float(it[1, 0, 1] - x)

    g0 = g(x0)
    if g0 == 0.0:
        return float(x0), 0.0, 0
    width = 0.01 * config.eta
    for k in range(max_iter):
        lo, hi = x0 - width, x0 + width
        glo, ghi = g(lo), g(hi)
        if np.sign(glo) != np.sign(g0):
            bracket = (lo, x0)
            break
        if np.sign(ghi) != np.sign(g0):
            bracket = (x0, hi)
            break
        width *= 2
        if width > config.eta:
            raise ConvergenceError("axis fixed point not bracketed within one stagnation offset")
    else:
        raise ConvergenceError("axis fixed point not bracketed")
    res = find_root(g, bracket=bracket, method="bisection", tol=1e-15, max_iter=200)
    return float(res.root), abs(g(res.root)), res.iterations


def _newton_map(p, config, params, spec, integrator, tol, max_iter):
    def resid(q):
        it, status, _ = iterate_map(q, 1, config, params, spec, integrator)
        if status[0] != _fast.OK:
            return None
        return it[1, 0] - q

    g = resid(p)
    if g is None:
        return None
    for k in range(max_iter):
        if np.max(np.abs(g)) < tol:
            return p, float(np.max(np.abs(g))), k
        try:
            J = map_jacobian(p, config, params, spec, integrator) - np.eye(2)
        except EscapeError:
            return None
        step = np.linalg.solve(J, g)
        lam = 1.0
        while lam > 1e-4:
            q = p - lam * step
            gq = resid(q) if q[0] > 0 else None
            if gq is not None and np.max(np.abs(gq)) < np.max(np.abs(g)):
                p, g = q, gq
                break
            lam *= 0.5
        else:
            return None
    return None


def _interior_fixed_point(config, params, spec, integrator, tol, max_iter):
    """Damped Newton with continuation in mu from the unperturbed saddle."""
    target = spec.mu
    path = [(0.0, np.array([config.s_hat, config.xi_hat]))]
    mu, dmu = 0.0, target
    while True:
        nxt = mu + dmu if abs(dmu) < abs(target - mu) else target
        if len(path) > 1:
            (m0, p0), (m1, p1) = path[-2], path[-1]
            seed = p1 + (p1 - p0) * (nxt - m1) / (m1 - m0)
        else:
            seed = path[-1][1]
        sub = OscillationSpec(nxt, spec.mode, spec.phase, spec.s_scale)
        sol = _newton_map(seed, config, params, sub, integrator, tol, max_iter)
        if sol is None:
            dmu *= 0.5
            if abs(dmu) < 1e-6 * max(abs(target), 1e-12):
                raise ConvergenceError("interior fixed-point Newton did not converge")
            continue
        p, res, k = sol
        mu = nxt
        path.append((mu, p))
        if mu == target:
            return {"s": float(p[0]), "x": float(p[1]), "residual": res, "iterations": k,
                    "continuation_steps": len(path) - 1}


def map_fixed_points(config: EquilibriumConfig, params: ModelParams, spec: OscillationSpec,
                     integrator: IntegratorSpec = DEFAULT_INTEGRATOR, tol: float = 1e-8,
                     max_iter: int = 50) -> dict:
    """Newton on Pi - id: axis points seeded at x+-, interior point at (s_hat, xi)."""
    out = {}
    for name, x0 in (("p_plus", config.x_plus), ("p_minus", config.x_minus)):
        x, res, k = _axis_fixed_point(x0, config, params, spec, integrator, tol, max_iter)
        out[name] = {"s": 0.0, "x": x, "residual": res, "iterations": k}
    out["q"] = _interior_fixed_point(config, params, spec, integrator, tol, max_iter)
    if not out["p_minus"]["x"] < out["p_plus"]["x"]:
        raise ConvergenceError("perturbed axis fixed points out of order")
    return out
