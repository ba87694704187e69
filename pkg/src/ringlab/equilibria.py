"""Stationary ring configurations and the fixed points of the frozen flow.

Four ring configurations exist, labelled by which radius sits on the small
or large branch of the reduced radii equation 2 alpha r = ln(chi r) - gamma:

    I (large, large), II (large, small), III (small, large), IV (small, small)
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from . import _fast
from .kinematics import equilibrium_rings, particle_velocity
from .numerics import ConvergenceError, DomainError, SingularityError, find_root, sigma_integral
from .ring_dynamics import ModelParams, packed, ring_velocity

TYPES = ("I", "II", "III", "IV")
# which branch (log form = large root, exp form = small root) updates each radius
_BRANCHES = {"I": ("log", "log"), "II": ("log", "exp"), "III": ("exp", "log"), "IV": ("exp", "exp")}


class NoStagnationError(ConvergenceError):
    """No axis stagnation point: the rings cannot overcome the swirl."""


@dataclass(frozen=True)
class ReducedRoots:
    r1a: float
    r1b: float
    r2a: float
    r2b: float
    r0: float
    rho: float

    def ordered(self) -> bool:
        return self.r0 < self.r2a < self.r1a < self.rho < self.r1b < self.r2b


@dataclass
class EquilibriumConfig:
    type_tag: str
    r1_hat: float
    r2_hat: float
    s1_hat: float
    s2_hat: float
    xi_hat: float
    eta: float
    x_plus: float
    x_minus: float
    s_hat: float
    nu: float
    A: float
    B: float
    eps_star: float
    a_hat: float
    residual: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


# -- reduced radii --------------------------------------------------------

def _reduced_psi(r, alpha, chi, gamma, kappa=1.0):
    return kappa * (np.log(chi * r) - gamma) - 2.0 * alpha * r


def admissible_alpha_max(params: ModelParams) -> float:
    rho = np.exp(params.gamma_const + 1.0) / params.chi
    return 1.0 / (2.0 * rho)


def solve_reduced_radii(params: ModelParams) -> ReducedRoots:
    """Small and large roots of 2 alpha r = kappa_k (ln(chi r) - gamma), k = 1, 2.

    Small roots by the exponential fixed-point map, large roots by the
    logarithmic one.
    """
    a, chi, g, k = params.alpha, params.chi, params.gamma_const, params.kappa
    if not 0 < a < admissible_alpha_max(params):
        raise DomainError("alpha outside the band where the reduced radii equations have roots")
    r0 = np.exp(g) / chi
    rho = np.exp(g + 1.0) / chi

    def small(kk):
        return find_root(lambda r: _reduced_psi(r, a, chi, g, kk), seed=r0, method="picard",
                         iteration_map=lambda r: np.exp(2 * a * r / kk + g) / chi, tol=1e-15).root

    def large(kk):
        seed = max(kk / a, 2 * rho)
        return find_root(lambda r: _reduced_psi(r, a, chi, g, kk), seed=seed, method="picard",
                         iteration_map=lambda r: kk * (np.log(chi * r) - g) / (2 * a), tol=1e-15).root

    return ReducedRoots(small(1.0), large(1.0), small(k), large(k), r0, rho)


# -- ring radii -----------------------------------------------------------

def _pair_integrals(r1, r2, params):
    P, _, _ = packed(params)
    if P[8] == 0.0:
        i0, ic = _fast.kern_agm(r1, r2, 0.0)
    else:
        _, u, wu = packed(params)
        i0, ic = _fast.kern_gl(r1, r2, 0.0, u, wu)
    return i0, ic


def _radii_map(r1, r2, params, branches):
    a, chi, g, k, m = params.alpha, params.chi, params.gamma_const, params.kappa, params.mutual_sign
    w1 = a * (1.0 + params.a1 * r1 ** 2 + params.a2 * r1 ** 4)
    i0, ic = _pair_integrals(r1, r2, params)
    mut1 = m * 4.0 * k * r1 * r2 * (r2 * i0 - r1 * ic)
    if branches[0] == "log":
        r1n = (np.log(chi * r1) - g + mut1) / (2.0 * w1)
    else:
        r1n = np.exp(2.0 * w1 * r1 + g - mut1) / chi
    w2 = a * (1.0 + params.a1 * r2 ** 2 + params.a2 * r2 ** 4)
    i0, ic = _pair_integrals(r1n, r2, params)
    mut2 = m * 4.0 * r1n * r2 * (r1n * i0 - r2 * ic)
    if branches[1] == "log":
        r2n = (k * (np.log(chi * r2) - g) + mut2) / (2.0 * w2)
    else:
        r2n = np.exp((2.0 * w2 * r2 + k * g - mut2) / k) / chi
    return r1n, r2n


def radii_residual(r1, r2, params: ModelParams, xi: float = 0.0) -> float:
    v = ring_velocity([r1 * r1, r2 * r2, xi, xi], params)
    return float(np.max(np.abs(v[2:])))


def type_seed(params: ModelParams, type_tag: str):
    red = solve_reduced_radii(params)
    return {"I": (red.r1b, red.r2b), "II": (red.r1b, red.r2a), "III": (0.001, 1.0),
            "IV": (red.r1a, red.r2a)}[type_tag]


def _picard(r1, r2, params, branches, tol, max_iter):
    trace = []
    with np.errstate(all="ignore"):
        for _ in range(max_iter):
            try:
                r1n, r2n = _radii_map(r1, r2, params, branches)
            except (SingularityError, ZeroDivisionError):
                return None, trace
            if not (np.isfinite(r1n) and np.isfinite(r2n)) or r1n <= 0 or r2n <= 0:
                return None, trace
            trace.append((r1n, r2n))
            if abs(r1n - r1) <= tol * r1n and abs(r2n - r2) <= tol * r2n:
                return (r1n, r2n), trace
            r1, r2 = r1n, r2n
    return None, trace


def _newton_log(r1, r2, params):
    def f(v):
        try:
            with np.errstate(all="ignore"):
                return ring_velocity([np.exp(2 * v[0]), np.exp(2 * v[1]), 0.0, 0.0], params)[2:]
        except SingularityError:
            return np.array([1e6, 1e6])

    sol = optimize.root(f, np.log([r1, r2]), method="lm", tol=1e-15)
    if not np.all(np.isfinite(sol.x)):
        return None
    return tuple(np.exp(sol.x))


def solve_radii(params: ModelParams, type_tag: str = "I", seed=None, tol: float = 1e-14,
                max_iter: int = 10_000, residual_tol: float = 1e-10):
    """Equilibrium ring radii (r1_hat, r2_hat).

    Coupled Picard iteration on the branch maps of the requested type; where
    that map is not contractive, a hybrid Newton solve in log radii from the
    same seed. The result must lie on the branches that define the type.
    """
    if type_tag not in TYPES:
        raise DomainError(f"unknown type {type_tag!r}")
    branches = _BRANCHES[type_tag]
    red = solve_reduced_radii(params)
    first = seed if seed is not None else type_seed(params, type_tag)
    ladder = [first] if seed is not None else [first, *_seed_ladder(red, branches)]
    error = None
    for r1, r2 in ladder:
        try:
            return _solve_from(r1, r2, params, type_tag, branches, red, tol, max_iter, residual_tol)
        except ConvergenceError as exc:
            error = exc if error is None else error
    raise error


def _seed_ladder(red: ReducedRoots, branches):
    # small radii: the reduced roots can put both rings almost on top of each other,
    # which starts the solve inside the near-singular region
    small = np.geomspace(0.02 * red.rho, 0.9 * red.rho, 6)
    large = np.geomspace(2 * red.rho, 2.0, 6)
    g1 = small if branches[0] == "exp" else large
    g2 = small if branches[1] == "exp" else large
    pairs = [(a, b) for a in g1 for b in g2 if abs(np.log(a / b)) > 0.3]
    # ring 1 outside ring 2 first: the reference small-ring configuration
    return sorted(pairs, key=lambda ab: ab[1] / ab[0])


def _solve_from(r1, r2, params, type_tag, branches, red, tol, max_iter, residual_tol):
    sol, trace = _picard(r1, r2, params, branches, tol, max_iter)
    if sol is None:
        sol = _newton_log(r1, r2, params)
    if sol is None:
        raise ConvergenceError(f"no type {type_tag} configuration found", trace[-20:])
    r1, r2 = map(float, sol)
    try:
        res = radii_residual(r1, r2, params)
    except SingularityError:
        res = np.inf
    if not res <= residual_tol:
        raise ConvergenceError(f"type {type_tag} residual {res:.3e} above tolerance", trace[-20:])
    for r, br in zip((r1, r2), branches):
        if (br == "exp") != (r < red.rho):
            raise ConvergenceError(f"type {type_tag} solve converged to a different configuration", trace[-20:])
    return r1, r2


# -- stagnation points ----------------------------------------------------

def axis_speed(x_rel, r1, r2, params: ModelParams) -> float:
    """Axial velocity on the axis at distance x_rel from the common ring plane."""
    k = params.kappa
    return float(-params.alpha + np.pi * (r1 ** 2 / (r1 ** 2 + x_rel ** 2) ** 1.5
                                          + k * r2 ** 2 / (r2 ** 2 + x_rel ** 2) ** 1.5))


def stagnation_offset(config_or_radii, params: ModelParams, xi: float | None = None):
    """(eta, x_plus, x_minus) for rings at rest in a common plane x = xi.

    xi defaults to the config's plane (or 0 for bare radii).
    """
    if isinstance(config_or_radii, EquilibriumConfig):
        r1, r2 = config_or_radii.r1_hat, config_or_radii.r2_hat
        xi = config_or_radii.xi_hat if xi is None else xi
    else:
        r1, r2 = config_or_radii
        xi = 0.0 if xi is None else xi
    f = lambda e: axis_speed(e, r1, r2, params)
    if f(0.0) <= 0:
        raise NoStagnationError("axial velocity at the ring plane is not positive")
    hi = max(r1, r2)
    while f(hi) > 0:
        hi *= 2.0
    root = find_root(f, bracket=(0.0, hi), method="bisection", tol=1e-14).root
    k = params.kappa
    df = lambda e: -3 * np.pi * e * (r1 ** 2 / (r1 ** 2 + e * e) ** 2.5 + k * r2 ** 2 / (r2 ** 2 + e * e) ** 2.5)
    for _ in range(3):
        root -= f(root) / df(root)
    return float(root), float(xi + root), float(xi - root)


# -- interior saddle ------------------------------------------------------

def xi_function(r, r1, r2, params: ModelParams) -> float:
    """sum_k kappa_k r_k int (r_k - r cos2s) / Delta_k^{3/2} at the ring plane."""
    tot = 0.0
    for kk, rk in zip(params.strengths, (r1, r2)):
        i0, ic = _fast.kern_agm(r, rk, 0.0)
        tot += kk * rk * (rk * i0 - r * ic)
    return float(tot)


def interior_saddle(config_or_radii, params: ModelParams) -> float:
    """s_hat: root of -alpha + 2 Xi(r) = 0 strictly between the ring radii."""
    if isinstance(config_or_radii, EquilibriumConfig):
        r1, r2 = config_or_radii.r1_hat, config_or_radii.r2_hat
    else:
        r1, r2 = config_or_radii
    lo, hi = sorted((r1, r2))
    f = lambda r: -params.alpha * (1 + params.a1 * r * r + params.a2 * r ** 4) + 2.0 * xi_function(r, r1, r2, params)
    inset = 1e-6 * (hi - lo)
    a, b = lo + inset, hi - inset
    if np.sign(f(a)) == np.sign(f(b)):
        grid = np.linspace(a, b, 401)
        vals = np.array([f(r) for r in grid])
        idx = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
        if idx.size == 0:
            raise ConvergenceError("interior saddle not bracketed between the rings")
        a, b = grid[idx[0]], grid[idx[0] + 1]
    r = find_root(f, bracket=(a, b), method="bisection", tol=1e-15).root
    return float(r * r)


# -- ring Jacobian --------------------------------------------------------

def _kernel_derivs(r1, r2, d, params):
    q = params.quad

    def integ(fn):
        return sigma_integral(r1, r2, d, fn, q)

    D1 = lambda s2: 2 * (r1 - r2) + 4 * r2 * s2
    D2 = lambda s2: 2 * (r2 - r1) + 4 * r1 * s2
    out = {
        "I0": integ(lambda c, s2, D: D ** -1.5),
        "Ic": integ(lambda c, s2, D: c * D ** -1.5),
        "I0_r1": integ(lambda c, s2, D: -1.5 * D1(s2) * D ** -2.5),
        "Ic_r1": integ(lambda c, s2, D: -1.5 * c * D1(s2) * D ** -2.5),
        "I0_r2": integ(lambda c, s2, D: -1.5 * D2(s2) * D ** -2.5),
        "Ic_r2": integ(lambda c, s2, D: -1.5 * c * D2(s2) * D ** -2.5),
        "I0_d": integ(lambda c, s2, D: -3.0 * d * D ** -2.5),
        "Ic_d": integ(lambda c, s2, D: -3.0 * d * c * D ** -2.5),
    }
    return out


@dataclass
class JacobianResult:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    zero_pair: np.ndarray
    oscillatory_pair: np.ndarray


def ring_jacobian_at(state, params: ModelParams) -> np.ndarray:
    """Analytic 4x4 derivative of the ring field (columns s1, s2, x1, x2)."""
    s1, s2, x1, x2 = np.asarray(state, dtype=float)
    r1, r2, d = np.sqrt(s1), np.sqrt(s2), x1 - x2
    k, m, g, chi = params.kappa, params.mutual_sign, params.gamma_const, params.chi
    K = _kernel_derivs(r1, r2, d, params)
    I0, Ic = K["I0"], K["Ic"]
    J = np.zeros((4, 4))
    # ds1/dt
    J[0, 0] = 4 * k * r2 * d * (Ic + r1 * K["Ic_r1"]) / (2 * r1)
    J[0, 1] = 4 * k * r1 * d * (Ic + r2 * K["Ic_r2"]) / (2 * r2)
    J[0, 2] = 4 * k * r1 * r2 * (Ic + d * K["Ic_d"])
    J[0, 3] = -J[0, 2]
    J[1] = -J[0] / k
    dsw = lambda s: -params.alpha * (params.a1 + 2 * params.a2 * s)
    # dx1/dt
    J[2, 0] = (dsw(s1) + (1 - np.log(chi * r1) + g) / (4 * r1 ** 3)
               + m * 2 * k * r2 * (r2 * K["I0_r1"] - Ic - r1 * K["Ic_r1"]) / (2 * r1))
    J[2, 1] = m * 2 * k * (2 * r2 * I0 + r2 ** 2 * K["I0_r2"] - r1 * Ic - r1 * r2 * K["Ic_r2"]) / (2 * r2)
    J[2, 2] = m * 2 * k * r2 * (r2 * K["I0_d"] - r1 * K["Ic_d"])
    J[2, 3] = -J[2, 2]
    # dx2/dt
    J[3, 0] = m * 2 * (2 * r1 * I0 + r1 ** 2 * K["I0_r1"] - r2 * Ic - r1 * r2 * K["Ic_r1"]) / (2 * r1)
    J[3, 1] = (dsw(s2) + k * (1 - np.log(chi * r2) + g) / (4 * r2 ** 3)
               + m * 2 * r1 * (r1 * K["I0_r2"] - Ic - r2 * K["Ic_r2"]) / (2 * r2))
    J[3, 2] = m * 2 * r1 * (r1 * K["I0_d"] - r2 * K["Ic_d"])
    J[3, 3] = -J[3, 2]
    return J


def ring_jacobian(config: EquilibriumConfig | tuple, params: ModelParams, xi: float | None = None) -> JacobianResult:
    """Jacobian of the ring field at a stationary configuration, with spectrum."""
    if isinstance(config, EquilibriumConfig):
        state = [config.s1_hat, config.s2_hat, config.xi_hat, config.xi_hat]
    else:
        r1, r2 = config
        x = 0.0 if xi is None else xi
        state = [r1 * r1, r2 * r2, x, x]
    J = ring_jacobian_at(state, params)
    ev = np.linalg.eigvals(J)
    order = np.argsort(np.abs(ev))
    return JacobianResult(J, ev, ev[order[:2]], ev[order[2:]])


@dataclass
class CenterCoefficients:
    nu: float
    A: float
    B: float
    nu_squared: float
    nu_eigen: float
    ratio_eigen: float
    relative_gap: float


def center_coefficients(config_or_radii, params: ModelParams) -> CenterCoefficients:
    """nu, A, B from the Jacobian entries, cross-checked with the eigenstructure.

    nu^2 = dPhi2/dx1 [dPsi2/ds2 - dPsi1/ds2 + kappa (dPsi1/ds1 - dPsi2/ds1)]
    B = dPhi2/dx1 [dPsi1/ds2 - kappa dPsi1/ds1],  A = nu^2 + B.
    """
    jr = ring_jacobian(config_or_radii, params)
    J, k = jr.matrix, params.kappa
    phi2_x1 = J[1, 2]
    P, Q, R, S = J[2, 0], J[2, 1], J[3, 0], J[3, 1]
    nu2 = phi2_x1 * (S - Q + k * (P - R))
    B = phi2_x1 * (Q - k * P)
    A = nu2 + B
    pair = jr.oscillatory_pair
    osc = pair[np.argmax(pair.imag)]
    nu_eig = float(abs(osc.imag)) if abs(osc.imag) > abs(osc.real) else float("nan")
    w, V = np.linalg.eig(J)
    v = V[:, np.argmin(np.abs(w - osc))]
    ratio = v[3] / v[2] if abs(v[2]) > 0 else np.nan
    ratio_eig = float(ratio.real)
    if nu2 > 0:
        nu = float(np.sqrt(nu2))
        gap = max(abs(nu - nu_eig) / nu, abs(A / B - ratio_eig) / max(abs(A / B), 1e-300))
    else:
        warnings.warn("negative radicand for nu; falling back to the eigenvalues", RuntimeWarning)
        nu = nu_eig
        gap = float("nan")
        if np.isfinite(nu_eig):
            B = 1.0
            A = ratio_eig
    return CenterCoefficients(nu, float(A), float(B), float(nu2), nu_eig, ratio_eig, float(gap))


# -- fixed points of the frozen flow ---------------------------------------

@dataclass
class FixedPoint:
    name: str
    s: float
    x: float
    kind: str
    eigenvalues: tuple
    rate: float = float("nan")
    slope: float = float("nan")


def axis_saddle_limits(r1, r2, eta, params: ModelParams, side: int):
    """Limits r -> 0 of the frozen-flow derivatives at (0, xi +- eta).

    Returns (dPhi/ds, dPhi/dx, dPsi/ds, dPsi/dx).
    """
    d = side * eta
    a = 0.0
    c = 0.0
    for kk, rk in zip(params.strengths, (r1, r2)):
        R2 = rk * rk + eta * eta
        a += 3 * np.pi * kk * rk * rk * d / R2 ** 2.5
        c += np.pi * kk * rk * rk * (-3.0 / R2 ** 2.5 + 15.0 * rk * rk / (4.0 * R2 ** 3.5))
    c += -params.alpha * params.a1
    return a, 0.0, c, -a


def axis_saddle_data(config: EquilibriumConfig, params: ModelParams) -> dict:
    out = {}
    for name, side in (("plus", 1), ("minus", -1)):
        a, _, c, _ = axis_saddle_limits(config.r1_hat, config.r2_hat, config.eta, params, side)
        vec = np.array([1.0, c / (2 * a)])
        vec /= np.hypot(*vec)
        if vec[0] < 0:
            vec = -vec
        out[name] = {"dPhi_ds": a, "dPsi_ds": c, "dPsi_dx": -a, "rate": abs(a), "slope": 2 * a / c,
                     "unstable_vector": vec if side > 0 else np.array([0.0, 1.0]),
                     "stable_vector": np.array([0.0, 1.0]) if side > 0 else vec,
                     "eigenvalues": (abs(a), -abs(a))}
    return out


def interior_saddle_data(config: EquilibriumConfig, params: ModelParams, rel_step: float = 1e-6) -> dict:
    ring = equilibrium_rings(config)
    s0, x0 = config.s_hat, config.xi_hat
    hs = rel_step * s0
    hx = rel_step * max(config.eta, np.sqrt(s0))
    fs = (particle_velocity((s0 + hs, x0), ring, params) - particle_velocity((s0 - hs, x0), ring, params)) / (2 * hs)
    fx = (particle_velocity((s0, x0 + hx), ring, params) - particle_velocity((s0, x0 - hx), ring, params)) / (2 * hx)
    P, Q = fx[0], fs[1]
    prod = P * Q
    lam = np.sqrt(abs(prod))
    vec = np.array([P / lam, 1.0]) if prod > 0 else np.array([1.0, 0.0])
    vec /= np.hypot(*vec)
    return {"dPhi_dx": P, "dPsi_ds": Q, "dPhi_ds": fs[0], "dPsi_dx": fx[1], "rate": lam,
            "eigenvalues": (lam, -lam) if prod > 0 else (1j * lam, -1j * lam), "unstable_vector": vec}


def classify_fixed_points(config: EquilibriumConfig, params: ModelParams) -> dict:
    """Axis saddles p+-, interior saddle q, and the two singular centers."""
    ax = axis_saddle_data(config, params)
    qd = interior_saddle_data(config, params)
    q_kind = "saddle" if np.isreal(qd["eigenvalues"][0]) else "center"
    return {
        "p_plus": FixedPoint("p_plus", 0.0, config.x_plus, "saddle", ax["plus"]["eigenvalues"],
                             ax["plus"]["rate"], ax["plus"]["slope"]),
        "p_minus": FixedPoint("p_minus", 0.0, config.x_minus, "saddle", ax["minus"]["eigenvalues"],
                              ax["minus"]["rate"], ax["minus"]["slope"]),
        "q": FixedPoint("q", config.s_hat, config.xi_hat, q_kind, qd["eigenvalues"], qd["rate"]),
        "c1": FixedPoint("c1", config.s1_hat, config.xi_hat, "singular center", ()),
        "c2": FixedPoint("c2", config.s2_hat, config.xi_hat, "singular center", ()),
    }


def solve_equilibrium(params: ModelParams, type_tag: str = "I", xi: float = 0.0, seed=None) -> EquilibriumConfig:
    """Radii, stagnation points, interior saddle and center coefficients."""
    r1, r2 = solve_radii(params, type_tag, seed=seed)
    eta, xp, xm = stagnation_offset((r1, r2), params, xi)
    s_hat = interior_saddle((r1, r2), params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cc = center_coefficients((r1, r2), params)
    s1, s2 = r1 * r1, r2 * r2
    eps = 0.5 * min(abs(s_hat - s1), abs(s2 - s_hat))
    return EquilibriumConfig(type_tag, r1, r2, s1, s2, xi, eta, xp, xm, s_hat, cc.nu, cc.A, cc.B,
                             eps, s1 + params.kappa * s2, radii_residual(r1, r2, params, xi))
