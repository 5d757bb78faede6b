"""Pure-Python/numpy fallbacks for the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation.  The reach kernel
uses scalar ``math`` calls so that its results are bit-identical to the
compiled build; the simulation kernel is vectorised over trajectories.
"""

from __future__ import annotations

import math

import numpy as np

from ..geom import SLACK, TINY

DEG = 180.0 / math.pi

OK, EXITED, DIVERGED = 0, 1, 2

HALF_PI = 0.5 * math.pi
TWO_PI = 2.0 * math.pi


# -- network ---------------------------------------------------------------

def mlp_forward(x, weights, biases, relu):
    """Batched forward pass; dot products accumulate in input order."""
    h = np.ascontiguousarray(x, dtype=np.float64)
    for W, b, r in zip(weights, biases, relu):
        out = np.empty((h.shape[0], W.shape[0]))
        out[:] = b
        for k in range(W.shape[1]):
            out += np.multiply.outer(h[:, k], W[:, k])
        if r:
            np.maximum(out, 0.0, out=out)
        h = out
    return h


# -- closed-loop simulation -----------------------------------------------

def _steer(x, lat, weights, biases, relu, phi_lim):
    n = x.shape[0]
    inp = np.empty((n, 2 + (0 if lat is None else lat.shape[1])))
    inp[:, 0] = x[:, 0]
    inp[:, 1] = x[:, 1] * DEG
    if lat is not None:
        inp[:, 2:] = lat
    phi = mlp_forward(inp, weights, biases, relu)[:, 0] / DEG
    sat = np.abs(phi) > phi_lim
    return np.clip(phi, -phi_lim, phi_lim), sat


# numpy's SIMD sin/tan can differ from libm in the last bit; use libm so the
# trajectories match the compiled kernel exactly
_sin_v = np.frompyfunc(math.sin, 1, 1)
_tan_v = np.frompyfunc(math.tan, 1, 1)


def _rhs(x, phi, v, kappa):
    d = np.empty_like(x)
    d[:, 0] = v * _sin_v(x[:, 1]).astype(np.float64)
    d[:, 1] = kappa * _tan_v(phi).astype(np.float64)
    return d


def simulate_batch(x0, weights, biases, relu, latents, v, L, phi_lim, h, n_steps, hold_every):
    """RK4 closed loop for many start states at once.

    ``hold_every == 0`` re-evaluates the controller at every RK4 stage
    (continuous actuation); otherwise the command is sampled every
    ``hold_every`` substeps and held (zero-order hold).
    """
    x = np.array(x0, dtype=np.float64)
    n = x.shape[0]
    kappa = v / L
    traj = np.empty((n, n_steps + 1, 2))
    phis = np.empty((n, n_steps))
    saturated = np.zeros(n, dtype=bool)
    traj[:, 0] = x
    held = None
    for k in range(n_steps):
        lat = None if latents is None else latents[:, k, :]
        if hold_every:
            if k % hold_every == 0:
                held, s = _steer(x, lat, weights, biases, relu, phi_lim)
                saturated |= s
            phi = held
            k1 = _rhs(x, phi, v, kappa)
            k2 = _rhs(x + (0.5 * h) * k1, phi, v, kappa)
            k3 = _rhs(x + (0.5 * h) * k2, phi, v, kappa)
            k4 = _rhs(x + h * k3, phi, v, kappa)
        else:
            phi, s1 = _steer(x, lat, weights, biases, relu, phi_lim)
            k1 = _rhs(x, phi, v, kappa)
            x2 = x + (0.5 * h) * k1
            p2, s2 = _steer(x2, lat, weights, biases, relu, phi_lim)
            k2 = _rhs(x2, p2, v, kappa)
            x3 = x + (0.5 * h) * k2
            p3, s3 = _steer(x3, lat, weights, biases, relu, phi_lim)
            k3 = _rhs(x3, p3, v, kappa)
            x4 = x + h * k3
            p4, s4 = _steer(x4, lat, weights, biases, relu, phi_lim)
            k4 = _rhs(x4, p4, v, kappa)
            saturated |= s1 | s2 | s3 | s4
        phis[:, k] = phi
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj[:, k + 1] = x
    return traj, phis, saturated


# -- interval helpers (scalar, (lo, hi) tuples) ----------------------------

def _dn(x):
    return x - SLACK * abs(x) - TINY


def _upr(x):
    return x + SLACK * abs(x) + TINY


def _add(a, b):
    return (_dn(a[0] + b[0]), _upr(a[1] + b[1]))


def _sub(a, b):
    return (_dn(a[0] - b[1]), _upr(a[1] - b[0]))


def _mul(a, b):
    p1 = a[0] * b[0]
    p2 = a[0] * b[1]
    p3 = a[1] * b[0]
    p4 = a[1] * b[1]
    return (_dn(min(p1, p2, p3, p4)), _upr(max(p1, p2, p3, p4)))


def _scale(s, a):
    if s >= 0.0:
        return (_dn(s * a[0]), _upr(s * a[1]))
    return (_dn(s * a[1]), _upr(s * a[0]))


def _sqr(a):
    if a[0] >= 0.0:
        return (_dn(a[0] * a[0]), _upr(a[1] * a[1]))
    if a[1] <= 0.0:
        return (_dn(a[1] * a[1]), _upr(a[0] * a[0]))
    m = max(-a[0], a[1])
    return (0.0, _upr(m * m))


def _crosses(lo, hi, phase):
    k = math.ceil((lo - phase) / TWO_PI - 1e-9)
    return phase + k * TWO_PI <= hi + 1e-9


def _sin(a):
    if a[1] - a[0] >= TWO_PI:
        return (-1.0, 1.0)
    s0 = math.sin(a[0])
    s1 = math.sin(a[1])
    lo = _dn(min(s0, s1))
    hi = _upr(max(s0, s1))
    if _crosses(a[0], a[1], HALF_PI):
        hi = 1.0
    if _crosses(a[0], a[1], -HALF_PI):
        lo = -1.0
    return (max(lo, -1.0), min(hi, 1.0))


def _cos(a):
    if a[1] - a[0] >= TWO_PI:
        return (-1.0, 1.0)
    c0 = math.cos(a[0])
    c1 = math.cos(a[1])
    lo = _dn(min(c0, c1))
    hi = _upr(max(c0, c1))
    if _crosses(a[0], a[1], 0.0):
        hi = 1.0
    if _crosses(a[0], a[1], math.pi):
        lo = -1.0
    return (max(lo, -1.0), min(hi, 1.0))


def _tan(a):
    return (_dn(math.tan(a[0])), _upr(math.tan(a[1])))


def _hull(a, b):
    return (min(a[0], b[0]), max(a[1], b[1]))


def _meet(a, b):
    lo = max(a[0], b[0])
    hi = min(a[1], b[1])
    if lo > hi:
        # both are sound enclosures, so this only happens through rounding
        return _hull(a, b)
    return (lo, hi)


def _within(outer, inner):
    return outer[0] <= inner[0] and inner[1] <= outer[1]


def _div_pt(x, d):
    """Point ``x`` divided by interval ``d`` (0 not in d)."""
    q1 = x / d[0]
    q2 = x / d[1]
    return (_dn(min(q1, q2)), _upr(max(q1, q2)))


# -- closed-loop vector field over boxes -----------------------------------

class _Field:
    __slots__ = ("kp", "kth", "c", "v", "kappa", "lim")

    def __init__(self, kp, kth, c, v, kappa, lim):
        self.kp, self.kth, self.c = kp, kth, c
        self.v, self.kappa, self.lim = v, kappa, lim

    def steer(self, P, T, W):
        phi = _add(_add(_scale(self.kp, P), _scale(self.kth, T)), _add((self.c, self.c), W))
        lim = self.lim
        slo = min(max(phi[0], -lim), lim)
        shi = min(max(phi[1], -lim), lim)
        if phi[0] >= -lim and phi[1] <= lim:
            sig = (1.0, 1.0)
        elif phi[0] >= lim or phi[1] <= -lim:
            sig = (0.0, 0.0)
        else:
            sig = (0.0, 1.0)
        return (slo, shi), sig

    def g(self, P, T, W):
        S, _ = self.steer(P, T, W)
        return _scale(self.v, _sin(T)), _scale(self.kappa, _tan(S))

    def jac(self, P, T, W):
        """Interval entries (j01, j10, j11, jw); j00 is identically zero."""
        S, sig = self.steer(P, T, W)
        j01 = _scale(self.v, _cos(T))
        if sig[1] == 0.0:
            zero = (0.0, 0.0)
            return j01, zero, zero, zero
        sec2 = _add((1.0, 1.0), _sqr(_tan(S)))
        jw = _mul(_scale(self.kappa, sec2), sig)
        return j01, _scale(self.kp, jw), _scale(self.kth, jw), jw


def _inflate(a, pad):
    w = a[1] - a[0]
    e = pad * w + 1e-9 * (abs(a[0]) + abs(a[1])) + 1e-12
    return (a[0] - e, a[1] + e)


def reach_kernel(box0, kp, kth, c, wlo, whi, v, L, phi_lim, gamma, horizon, n_sub, max_picard):
    """Preconditioned interval integration of the 2-D closed loop.

    The set at each grid time is kept as ``xh + M z`` with ``z`` in a box
    ``Z``; ``M`` tracks the nominal sensitivity so that rotation of the set
    does not get wrapped into the box at every step.

    Returns ``(steps, final, status, n_done)``: ``steps[k]`` encloses the
    states over the k-th substep (``p_lo, p_hi, th_lo, th_hi``), ``final``
    encloses the states at ``horizon``.
    """
    fld = _Field(kp, kth, c, v, v / L, phi_lim)
    h = horizon / n_sub
    hI = (0.0, h)
    W = (wlo, whi)
    w0 = 0.5 * (wlo + whi)
    Wc = (_dn(wlo - w0), _upr(whi - w0))
    W0 = (w0, w0)

    P = (box0[0], box0[1])
    T = (box0[2], box0[3])
    xh0 = 0.5 * (P[0] + P[1])
    xh1 = 0.5 * (T[0] + T[1])
    m00, m01, m10, m11 = 1.0, 0.0, 0.0, 1.0
    Z0 = (_dn(P[0] - xh0), _upr(P[1] - xh0))
    Z1 = (_dn(T[0] - xh1), _upr(T[1] - xh1))
    gP = (gamma[0], gamma[1])
    gT = (gamma[2], gamma[3])

    steps = np.empty((n_sub, 4))
    status = OK
    n_done = 0
    for k in range(n_sub):
        # a-priori enclosure over [t_k, t_k + h]
        G0, G1 = fld.g(P, T, W)
        E0 = _add(P, _mul(hI, G0))
        E1 = _add(T, _mul(hI, G1))
        pad = 0.05
        ok = False
        for _ in range(max_picard):
            A0 = _inflate(E0, pad)
            A1 = _inflate(E1, pad)
            G0, G1 = fld.g(A0, A1, W)
            N0 = _add(P, _mul(hI, G0))
            N1 = _add(T, _mul(hI, G1))
            if _within(A0, N0) and _within(A1, N1):
                E0, E1 = N0, N1
                ok = True
                break
            E0, E1 = N0, N1
            pad *= 2.0
        if not ok:
            status = DIVERGED
            break
        for _ in range(2):
            G0, G1 = fld.g(E0, E1, W)
            E0 = _meet(E0, _add(P, _mul(hI, G0)))
            E1 = _meet(E1, _add(T, _mul(hI, G1)))
        steps[k, 0], steps[k, 1] = E0
        steps[k, 2], steps[k, 3] = E1
        n_done = k + 1
        if not (_within(gP, E0) and _within(gT, E1)):
            status = EXITED
            break

        # remainder: second-order drift plus disturbance spread
        G0, G1 = fld.g(E0, E1, W)
        S0 = _mul(hI, G0)
        S1 = _mul(hI, G1)
        j01, j10, j11, _ = fld.jac(E0, E1, W)
        _, _, _, jw = fld.jac(P, T, W)
        D0 = _scale(h, _mul(j01, S1))
        D1 = _add(_scale(h, _add(_mul(j10, S0), _mul(j11, S1))), _scale(h, _mul(jw, Wc)))

        # nominal Euler step of the reference point
        X0 = (xh0, xh0)
        X1 = (xh1, xh1)
        f0, f1 = fld.g(X0, X1, W0)
        F0 = _add(X0, _scale(h, f0))
        F1 = _add(X1, _scale(h, f1))

        # B = (I + h Jx(hull(X, xh), w0)) M
        PJ = _hull(P, X0)
        TJ = _hull(T, X1)
        a01, a10, a11, _ = fld.jac(PJ, TJ, W0)
        a01 = _scale(h, a01)
        a10 = _scale(h, a10)
        a11 = _add((1.0, 1.0), _scale(h, a11))
        b00 = _add((m00, m00), _scale(m10, a01))
        b01 = _add((m01, m01), _scale(m11, a01))
        b10 = _add(_scale(m00, a10), _scale(m10, a11))
        b11 = _add(_scale(m01, a10), _scale(m11, a11))

        n00 = 0.5 * (b00[0] + b00[1])
        n01 = 0.5 * (b01[0] + b01[1])
        n10 = 0.5 * (b10[0] + b10[1])
        n11 = 0.5 * (b11[0] + b11[1])
        det = _sub((n00 * n11, n00 * n11), (n01 * n10, n01 * n10))
        det = (_dn(det[0]), _upr(det[1]))
        norm = abs(n00) + abs(n01) + abs(n10) + abs(n11)
        if det[0] > 0.0 or det[1] < 0.0:
            mag = min(abs(det[0]), abs(det[1]))
            good = norm * norm < 1e10 * mag
        else:
            good = False
        if good:
            i00 = _div_pt(n11, det)
            i01 = _div_pt(-n01, det)
            i10 = _div_pt(-n10, det)
            i11 = _div_pt(n00, det)
        else:
            n00, n01, n10, n11 = 1.0, 0.0, 0.0, 1.0
            i00, i01, i10, i11 = (1.0, 1.0), (0.0, 0.0), (0.0, 0.0), (1.0, 1.0)

        nx0 = 0.5 * (F0[0] + F0[1])
        nx1 = 0.5 * (F1[0] + F1[1])
        r0 = _add(_sub(F0, (nx0, nx0)), D0)
        r1 = _add(_sub(F1, (nx1, nx1)), D1)
        c00 = _add(_mul(i00, b00), _mul(i01, b10))
        c01 = _add(_mul(i00, b01), _mul(i01, b11))
        c10 = _add(_mul(i10, b00), _mul(i11, b10))
        c11 = _add(_mul(i10, b01), _mul(i11, b11))
        nZ0 = _add(_add(_mul(i00, r0), _mul(i01, r1)), _add(_mul(c00, Z0), _mul(c01, Z1)))
        nZ1 = _add(_add(_mul(i10, r0), _mul(i11, r1)), _add(_mul(c10, Z0), _mul(c11, Z1)))

        xh0, xh1 = nx0, nx1
        m00, m01, m10, m11 = n00, n01, n10, n11
        Z0, Z1 = nZ0, nZ1

        # new endpoint box: meet of the frame image, the a-priori enclosure
        # and the plain first-order step
        Q0 = _add((xh0, xh0), _add(_scale(m00, Z0), _scale(m01, Z1)))
        Q1 = _add((xh1, xh1), _add(_scale(m10, Z0), _scale(m11, Z1)))
        H0 = _add(P, _scale(h, G0))
        H1 = _add(T, _scale(h, G1))
        P = _meet(_meet(Q0, E0), H0)
        T = _meet(_meet(Q1, E1), H1)

    final = np.array([P[0], P[1], T[0], T[1]])
    return steps, final, status, n_done
