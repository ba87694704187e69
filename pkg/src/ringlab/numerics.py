"""Numerical kernels shared by the ring and particle models.

Complete elliptic integrals by AGM, Gauss-Legendre quadrature over the
azimuthal variable sigma in [0, pi/2], fixed-step RK4, scalar root finding
and a two-term cosine fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

HALF_PI = 0.5 * np.pi


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class SingularityError(ArithmeticError):
    """A kernel denominator vanishes (particle or ring inside a ring core)."""


class ConvergenceError(RuntimeError):
    """Iterative solver failed to converge."""

    def __init__(self, message: str, trace: Sequence[float] | None = None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class FitError(DomainError):
    """Degenerate sample set for a least-squares fit."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Sigma-quadrature settings.

    ``closed_form`` lets the compiled field kernels evaluate the two
    power-3/2 integrals through their elliptic reductions; with False they
    use the graded Gauss-Legendre rule of ``order`` nodes.
    """

    order: int = 96
    split_threshold: float = 1e-8
    closed_form: bool = True

    def __post_init__(self):
        if self.order < 8:
            raise DomainError("quadrature order must be >= 8")
        if not self.split_threshold > 0:
            raise DomainError("split_threshold must be positive")


@dataclass(frozen=True)
class IntegratorSpec:
    step: float = 1e-4
    max_time: float = 1e4

    def __post_init__(self):
        if not (0 < self.step <= 1e-2):
            raise DomainError("step must lie in (0, 1e-2]")
        if not self.max_time > 0:
            raise DomainError("max_time must be positive")


DEFAULT_QUAD = QuadratureSpec()
DEFAULT_INTEGRATOR = IntegratorSpec()


# -- elliptic integrals ---------------------------------------------------

def _agm_terms(lam):
    lam = np.asarray(lam, dtype=float)
    a = np.ones_like(lam)
    b = np.sqrt((1.0 - lam) * (1.0 + lam))
    c = lam.copy()
    acc = 0.5 * c * c
    weight = 0.5
    for _ in range(40):
        a_next = 0.5 * (a + b)
        c = 0.5 * (a - b)
        b = np.sqrt(a * b)
        a = a_next
        weight *= 2.0
        acc = acc + weight * c * c
        if np.all(np.abs(c) <= 1e-17 * a):
            break
    K = HALF_PI / a
    return K, acc


def _check_modulus(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(~np.isfinite(lam)) or np.any(lam < 0) or np.any(lam >= 1):
        raise DomainError("elliptic modulus must lie in [0, 1)")
    return lam


def elliptic_KE(lam):
    """Complete elliptic integrals K(lam), E(lam) of modulus ``lam``.

    K = int_0^{pi/2} (1 - lam^2 sin^2 t)^{-1/2} dt and
    E = int_0^{pi/2} (1 - lam^2 sin^2 t)^{1/2} dt, evaluated with the
    arithmetic-geometric mean. Accepts scalars or arrays.
    """
    lam = _check_modulus(lam)
    K, acc = _agm_terms(lam)
    E = K * (1.0 - acc)
    if K.ndim == 0:
        return float(K), float(E)
    return K, E


def elliptic_K_minus_E(lam):
    """K(lam) - E(lam) without cancellation at small modulus."""
    lam = _check_modulus(lam)
    K, acc = _agm_terms(lam)
    out = K * acc
    return float(out) if out.ndim == 0 else out


# -- sigma quadrature -----------------------------------------------------

@lru_cache(maxsize=16)
def _unit_nodes(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (x + 1.0)
    return u, 0.5 * w

# peak-width below which nodes are graded toward sigma = 0
_GRADE_WIDTH = 0.2


def sigma_nodes(ra, rb, dx, spec: QuadratureSpec = DEFAULT_QUAD):
    """Quadrature nodes for integrals in sigma with Delta(ra, rb, dx).

    Returns ``(cos2s, sin2s, delta, weights)`` with shape ``(..., order)``
    where ``sin2s`` is sin^2(sigma). Raises SingularityError when the
    minimum of Delta over sigma is below ``spec.split_threshold``.
    """
    ra = np.asarray(ra, dtype=float)[..., None]
    rb = np.asarray(rb, dtype=float)[..., None]
    dx = np.asarray(dx, dtype=float)[..., None]
    dmin = (ra - rb) ** 2 + dx * dx
    if np.any(dmin < spec.split_threshold):
        raise SingularityError("sigma kernel evaluated inside a ring core")
    scale = 4.0 * ra * rb
    u, wu = _unit_nodes(spec.order)
    with np.errstate(divide="ignore", invalid="ignore"):
        width = np.sqrt(dmin / np.where(scale > 0, scale, 1.0))
    graded = (scale > 0) & (width < _GRADE_WIDTH)
    if np.any(graded):
        wg = np.where(graded, width, 1.0)
        span = np.arcsinh(HALF_PI / wg)
        sig_g = wg * np.sinh(u * span)
        jac_g = wg * span * np.cosh(u * span)
        sigma = np.where(graded, sig_g, HALF_PI * u)
        jac = np.where(graded, jac_g, HALF_PI)
    else:
        sigma = HALF_PI * u + 0.0 * dmin
        jac = np.full_like(sigma, HALF_PI)
    sin2 = np.sin(sigma) ** 2
    cos2s = 1.0 - 2.0 * sin2
    delta = dmin + scale * sin2
    return cos2s, sin2, delta, wu * jac


def sigma_integral(ra, rb, dx, integrand: Callable, spec: QuadratureSpec = DEFAULT_QUAD):
    """Integrate ``integrand(cos2s, sin2s, delta)`` over sigma in [0, pi/2]."""
    c, s2, d, w = sigma_nodes(ra, rb, dx, spec)
    out = np.sum(integrand(c, s2, d) * w, axis=-1)
    return float(out) if out.ndim == 0 else out


def _weight_fn(weight, ra, rb):
    if callable(weight):
        return weight
    ra_ = np.asarray(ra, dtype=float)[..., None]
    rb_ = np.asarray(rb, dtype=float)[..., None]
    if weight == "cos2":
        return lambda c, s2: c
    if weight == "one":
        return lambda c, s2: np.ones_like(c)
    if weight == "lin":
        return lambda c, s2: rb_ - ra_ * c
    raise DomainError(f"unknown kernel weight {weight!r}")


def _cos2_half_closed(ra, rb, dx):
    ra = np.asarray(ra, dtype=float)
    rb = np.asarray(rb, dtype=float)
    dx = np.asarray(dx, dtype=float)
    rp = np.sqrt((ra + rb) ** 2 + dx * dx)
    rm = np.sqrt((ra - rb) ** 2 + dx * dx)
    lam = (rp - rm) / (rp + rm)
    return (rp + rm) * elliptic_K_minus_E(lam) / (2.0 * ra * rb)


def sigma_kernel(ra, rb, dx, power: float, weight="cos2", spec: QuadratureSpec = DEFAULT_QUAD):
    """int_0^{pi/2} w(sigma) Delta^{-power} dsigma.

    ``weight`` is "cos2" (cos 2 sigma), "lin" (rb - ra cos 2 sigma), "one",
    or a callable ``w(cos2s, sin2s)``. Power 1/2 with cos2 weight uses the
    elliptic closed form; everything else uses graded Gauss-Legendre.
    """
    if power not in (0.5, 1.5, 2.5):
        raise DomainError("power must be one of 1/2, 3/2, 5/2")
    dmin = (np.asarray(ra, float) - np.asarray(rb, float)) ** 2 + np.asarray(dx, float) ** 2
    if np.any(dmin < spec.split_threshold):
        raise SingularityError("sigma kernel evaluated inside a ring core")
    if power == 0.5 and weight == "cos2":
        out = _cos2_half_closed(ra, rb, dx)
        return float(out) if np.ndim(out) == 0 else out
    w = _weight_fn(weight, ra, rb)
    return sigma_integral(ra, rb, dx, lambda c, s2, d: w(c, s2) * d ** (-power), spec)


# -- ODE integration ------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    aborted: bool = False
    abort_time: float | None = None
    reason: str = ""

    @property
    def final(self):
        return self.y[-1]


def rk4_integrate(
    field: Callable,
    y0,
    t0: float,
    t1: float,
    spec: IntegratorSpec = DEFAULT_INTEGRATOR,
    sample_every: int = 1,
    stop: Callable | None = None,
) -> Trajectory:
    """Classical fixed-step RK4 for ``y' = field(t, y)``.

    The step is shrunk slightly so that an integer number of steps lands
    on ``t1``. A SingularityError raised by ``field`` (or ``stop(t, y)``
    returning a truthy reason) ends the run; the trajectory then holds the
    last good state and ``aborted`` is set.
    """
    if not t1 > t0:
        raise DomainError("t1 must exceed t0")
    if t1 - t0 > spec.max_time:
        raise DomainError("time span exceeds IntegratorSpec.max_time")
    n = max(1, int(np.ceil((t1 - t0) / spec.step - 1e-9)))
    h = (t1 - t0) / n
    y = np.array(y0, dtype=float)
    ts = [t0]
    ys = [y.copy()]
    t = t0
    for i in range(1, n + 1):
        try:
            k1 = field(t, y)
            k2 = field(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = field(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = field(t + h, y + h * k3)
        except SingularityError as exc:
            if ts[-1] != t:
                ts.append(t)
                ys.append(y.copy())
            return Trajectory(np.array(ts), np.array(ys), True, t, str(exc))
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + i * h
        if not np.all(np.isfinite(y)):
            return Trajectory(np.array(ts), np.array(ys), True, t, "non-finite state")
        if stop is not None:
            why = stop(t, y)
            if why:
                ts.append(t)
                ys.append(y.copy())
                return Trajectory(np.array(ts), np.array(ys), True, t, str(why))
        if i % sample_every == 0 or i == n:
            ts.append(t)
            ys.append(y.copy())
    return Trajectory(np.array(ts), np.array(ys))


# -- root finding ---------------------------------------------------------

@dataclass
class RootResult:
    root: float
    iterations: int
    residual: float
    trace: list = field(default_factory=list)


def find_root(
    f: Callable[[float], float] | None,
    bracket: tuple[float, float] | None = None,
    seed: float | None = None,
    method: str = "bisection",
    tol: float = 1e-12,
    max_iter: int = 10_000,
    iteration_map: Callable[[float], float] | None = None,
    dfdx: Callable[[float], float] | None = None,
) -> RootResult:
    """Scalar root by bisection, Newton or Picard iteration.

    Bisection stops when the residual or the bracket width drops below
    ``tol``. Newton uses ``dfdx`` when given, a central difference
    otherwise. Picard iterates ``iteration_map`` from ``seed`` until
    successive iterates differ by less than ``tol``.
    """
    if method == "bisection":
        if bracket is None:
            raise DomainError("bisection needs a bracket")
        a, b = map(float, bracket)
        fa, fb = f(a), f(b)
        if fa == 0:
            return RootResult(a, 0, 0.0)
        if fb == 0:
            return RootResult(b, 0, 0.0)
        if np.sign(fa) == np.sign(fb):
            raise ConvergenceError("bisection bracket has no sign change")
        for it in range(1, max_iter + 1):
            m = 0.5 * (a + b)
            fm = f(m)
            if fm == 0 or abs(fm) < tol or abs(b - a) < tol * max(1.0, abs(m)) * 1e-3 or m in (a, b):
                return RootResult(m, it, abs(fm))
            if np.sign(fm) == np.sign(fa):
                a, fa = m, fm
            else:
                b, fb = m, fm
        raise ConvergenceError("bisection exceeded max_iter")
    if method == "newton":
        if seed is None:
            raise DomainError("newton needs a seed")
        x = float(seed)
        trace = [x]
        for it in range(1, max_iter + 1):
            fx = f(x)
            if abs(fx) < tol:
                return RootResult(x, it - 1, abs(fx), trace)
            if dfdx is not None:
                d = dfdx(x)
            else:
                h = 1e-7 * max(1.0, abs(x))
                d = (f(x + h) - f(x - h)) / (2 * h)
            if d == 0 or not np.isfinite(d):
                raise ConvergenceError("newton hit a zero derivative", trace)
            x_new = x - fx / d
            trace.append(x_new)
            if abs(x_new - x) < tol * 1e-3:
                x = x_new
                return RootResult(x, it, abs(f(x)), trace)
            x = x_new
        raise ConvergenceError("newton exceeded max_iter", trace)
    if method == "picard":
        if iteration_map is None or seed is None:
            raise DomainError("picard needs an iteration map and a seed")
        x = float(seed)
        trace = [x]
        for it in range(1, max_iter + 1):
            x_new = float(iteration_map(x))
            if not np.isfinite(x_new):
                raise ConvergenceError("picard iterate is not finite", trace)
            trace.append(x_new)
            if abs(x_new - x) < tol:
                res = abs(f(x_new)) if f is not None else abs(x_new - x)
                return RootResult(x_new, it, res, trace[-20:])
            x = x_new
        raise ConvergenceError("picard exceeded max_iter", trace[-20:])
    raise DomainError(f"unknown root method {method!r}")


# -- cosine fit -----------------------------------------------------------

@dataclass
class CosineFit:
    C: float
    phase: float
    rms_residual: float


def fit_cosine(tau, values, nu: float) -> CosineFit:
    """Least-squares fit of ``values ~ C cos(nu tau + phase)``.

    The sign of C is chosen so that |phase| <= pi/2.
    """
    tau = np.asarray(tau, dtype=float)
    v = np.asarray(values, dtype=float)
    if tau.size < 3 or tau.size != v.size:
        raise FitError("need at least three (tau, value) samples")
    if np.ptp(tau) == 0:
        raise FitError("all sample offsets coincide")
    X = np.column_stack([np.cos(nu * tau), np.sin(nu * tau)])
    if np.linalg.matrix_rank(X) < 2:
        raise FitError("sample set does not determine a cosine")
    (a, b), *_ = np.linalg.lstsq(X, v, rcond=None)
    C = float(np.hypot(a, b))
    phase = float(np.arctan2(-b, a)) if C > 0 else 0.0
    if phase > HALF_PI:
        C, phase = -C, phase - np.pi
    elif phase <= -HALF_PI:
        C, phase = -C, phase + np.pi
    rms = float(np.sqrt(np.mean((X @ np.array([a, b]) - v) ** 2)))
    return CosineFit(C, phase, rms)
