"""Compiled field kernels for the inner integration loops.

The two power-3/2 sigma integrals

    I0 = int_0^{pi/2} Delta^{-3/2},   Ic = int_0^{pi/2} cos(2 s) Delta^{-3/2},
    Delta = (ra - rb)^2 + d^2 + 4 ra rb sin^2 s,

reduce to complete elliptic integrals of parameter m = 4 ra rb / r+^2:
I0 = E / (r+ r-^2) and Ic = K (acc - 2 q / m) / (r+ r-^2), where acc and q
are the AGM sums giving K - E = K acc. A graded Gauss-Legendre rule is kept
as an alternative (mode 1).

Parameter vector layout (``P``):
    0 alpha, 1 kappa, 2 chi, 3 gamma, 4 a1, 5 a2, 6 mutual_sign,
    7 singular threshold, 8 kernel mode (0 elliptic, 1 Gauss-Legendre)
Ring-motion vector layout (``R``):
    0 s1_hat, 1 s2_hat, 2 xi, 3 mu, 4 s-amplitude factor, 5 nu,
    6 A/B, 7 phase, 8 kappa
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

HALF_PI = 0.5 * math.pi
GRADE_WIDTH = 0.2

OK, CORE, ESCAPE, NONFINITE = 0, 1, 2, 3


@njit(cache=True)
def kern_agm(ra, rb, d):
    rp2 = (ra + rb) ** 2 + d * d
    rm2 = (ra - rb) ** 2 + d * d
    rp = math.sqrt(rp2)
    rm = math.sqrt(rm2)
    m = 4.0 * ra * rb / rp2
    a = 1.0
    b = rm / rp
    c = math.sqrt(m)
    acc = 0.5 * m
    q = 0.0
    w = 0.5
    for _ in range(40):
        an = 0.5 * (a + b)
        c = c * c / (4.0 * an)
        b = math.sqrt(a * b)
        a = an
        w *= 2.0
        t = w * c * c
        acc += t
        q += t
        if c <= 1e-17 * a:
            break
    K = HALF_PI / a
    E = K * (1.0 - acc)
    den = rp * rm2
    i0 = E / den
    if m == 0.0:
        ic = 0.0
    else:
        ic = K * (acc - 2.0 * q / m) / den
    return i0, ic


@njit(cache=True)
def kern_gl(ra, rb, d, u, wu):
    dmin = (ra - rb) ** 2 + d * d
    scale = 4.0 * ra * rb
    graded = scale > 0.0 and dmin < GRADE_WIDTH * GRADE_WIDTH * scale
    wd = 1.0
    span = 0.0
    if graded:
        wd = math.sqrt(dmin / scale)
        span = math.asinh(HALF_PI / wd)
    i0 = 0.0
    ic = 0.0
    for j in range(u.size):
        if graded:
            e = math.exp(u[j] * span)
            sg = wd * 0.5 * (e - 1.0 / e)
            jac = wd * span * 0.5 * (e + 1.0 / e)
        else:
            sg = HALF_PI * u[j]
            jac = HALF_PI
        s2 = math.sin(sg) ** 2
        dl = dmin + scale * s2
        p = wu[j] * jac / (dl * math.sqrt(dl))
        i0 += p
        ic += (1.0 - 2.0 * s2) * p
    return i0, ic


@njit(cache=True)
def kern(ra, rb, d, P, u, wu):
    if (ra - rb) ** 2 + d * d < P[7]:
        return np.nan, np.nan
    if P[8] == 0.0:
        return kern_agm(ra, rb, d)
    return kern_gl(ra, rb, d, u, wu)


@njit(cache=True)
def ring_rhs(y, P, u, wu, out):
    s1, s2, x1, x2 = y[0], y[1], y[2], y[3]
    if s1 <= 0.0 or s2 <= 0.0:
        return False
    r1 = math.sqrt(s1)
    r2 = math.sqrt(s2)
    d = x1 - x2
    i0, ic = kern(r1, r2, d, P, u, wu)
    if math.isnan(i0):
        return False
    alpha, kappa, chi, gam, a1, a2, ms = P[0], P[1], P[2], P[3], P[4], P[5], P[6]
    g = 4.0 * r1 * r2 * d * ic
    out[0] = kappa * g
    out[1] = -g
    out[2] = -alpha * (1.0 + a1 * s1 + a2 * s1 * s1) + (math.log(chi * r1) - gam) / (2.0 * r1) \
        + ms * 2.0 * kappa * r2 * (r2 * i0 - r1 * ic)
    out[3] = -alpha * (1.0 + a1 * s2 + a2 * s2 * s2) + kappa * (math.log(chi * r2) - gam) / (2.0 * r2) \
        + ms * 2.0 * r1 * (r1 * i0 - r2 * ic)
    return True


@njit(cache=True)
def particle_rhs(s, x, ring, P, u, wu):
    """Returns (ds, dx, status)."""
    alpha, kappa, a1, a2 = P[0], P[1], P[4], P[5]
    dx = -alpha * (1.0 + a1 * s + a2 * s * s)
    if s <= 0.0:
        for k in range(2):
            kk = 1.0 if k == 0 else kappa
            rk2 = ring[k]
            dd = x - ring[2 + k]
            if rk2 + dd * dd < P[7]:
                return 0.0, 0.0, CORE
            dx += math.pi * kk * rk2 / (rk2 + dd * dd) ** 1.5
        return 0.0, dx, OK
    r = math.sqrt(s)
    ds = 0.0
    for k in range(2):
        kk = 1.0 if k == 0 else kappa
        rk = math.sqrt(ring[k])
        dd = x - ring[2 + k]
        i0, ic = kern(r, rk, dd, P, u, wu)
        if math.isnan(i0):
            return 0.0, 0.0, CORE
        ds += 4.0 * r * kk * rk * dd * ic
        dx += 2.0 * kk * rk * (rk * i0 - r * ic)
    return ds, dx, OK


@njit(cache=True)
def ring_motion(t, R, out):
    arg = R[5] * t + R[7]
    sn = math.sin(arg)
    cs = math.cos(arg)
    amp = R[3] * R[4]
    out[0] = R[0] + amp * sn
    out[1] = R[1] - amp * sn / R[8]
    out[2] = R[2] + R[3] * cs
    out[3] = R[2] + R[3] * R[6] * cs


@njit(cache=True, nogil=True)
def advect_batch(states, t0, h, nsteps, sample_every, R, P, u, wu, box, samples, status, stop_step):
    """RK4 for many particles under analytic ring motion.

    ``samples`` has shape (nsamp, n, 2) with nsamp = nsteps // sample_every + 1;
    ``box`` is (xlo, xhi, smax) for escape detection (NaNs disable it).
    """
    n = states.shape[0]
    ring = np.empty(4)
    for i in range(n):
        s = states[i, 0]
        x = states[i, 1]
        samples[0, i, 0] = s
        samples[0, i, 1] = x
        status[i] = OK
        stop_step[i] = nsteps
        for j in range(1, nsteps + 1):
            t = t0 + (j - 1) * h
            ring_motion(t, R, ring)
            k1s, k1x, st = particle_rhs(s, x, ring, P, u, wu)
            if st != OK:
                status[i] = st
                stop_step[i] = j - 1
                break
            ring_motion(t + 0.5 * h, R, ring)
            k2s, k2x, st = particle_rhs(s + 0.5 * h * k1s, x + 0.5 * h * k1x, ring, P, u, wu)
            if st != OK:
                status[i] = st
                stop_step[i] = j - 1
                break
            k3s, k3x, st = particle_rhs(s + 0.5 * h * k2s, x + 0.5 * h * k2x, ring, P, u, wu)
            if st != OK:
                status[i] = st
                stop_step[i] = j - 1
                break
            ring_motion(t + h, R, ring)
            k4s, k4x, st = particle_rhs(s + h * k3s, x + h * k3x, ring, P, u, wu)
            if st != OK:
                status[i] = st
                stop_step[i] = j - 1
                break
            s = s + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
            x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            if s < 0.0:
                s = 0.0
            if not (math.isfinite(s) and math.isfinite(x)):
                status[i] = NONFINITE
                stop_step[i] = j
                break
            if j % sample_every == 0:
                idx = j // sample_every
                samples[idx, i, 0] = s
                samples[idx, i, 1] = x
            if x < box[0] or x > box[1] or s > box[2]:
                status[i] = ESCAPE
                stop_step[i] = j
                break
        if status[i] != OK:
            last = stop_step[i] // sample_every
            for idx in range(last + 1, samples.shape[0]):
                samples[idx, i, 0] = np.nan
                samples[idx, i, 1] = np.nan
            if stop_step[i] % sample_every != 0:
                samples[min(last + 1, samples.shape[0] - 1), i, 0] = s
                samples[min(last + 1, samples.shape[0] - 1), i, 1] = x


@njit(cache=True)
def ring_rk4(y0, t0, h, nsteps, sample_every, P, u, wu, samples):
    """RK4 for the ring pair. Returns the number of completed steps."""
    y = y0.copy()
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    samples[0, :] = y
    for j in range(1, nsteps + 1):
        if not ring_rhs(y, P, u, wu, k1):
            return j - 1
        for i in range(4):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        if not ring_rhs(tmp, P, u, wu, k2):
            return j - 1
        for i in range(4):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        if not ring_rhs(tmp, P, u, wu, k3):
            return j - 1
        for i in range(4):
            tmp[i] = y[i] + h * k3[i]
        if not ring_rhs(tmp, P, u, wu, k4):
            return j - 1
        for i in range(4):
            y[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if j % sample_every == 0:
            samples[j // sample_every, :] = y
    return nsteps
