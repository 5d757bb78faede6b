# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Operation order mirrors ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, tan, ceil, fabs, fmin, fmax
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double SLACK = 1e-12
cdef double TINY = 1e-300
cdef double PI = 3.141592653589793
cdef double HALF_PI = 0.5 * PI
cdef double TWO_PI = 2.0 * PI
cdef double DEG = 180.0 / PI

cdef int OK = 0
cdef int EXITED = 1
cdef int DIVERGED = 2


ctypedef struct iv:
    double lo
    double hi


cdef inline double _dn(double x) nogil:
    return x - SLACK * fabs(x) - TINY


cdef inline double _upr(double x) nogil:
    return x + SLACK * fabs(x) + TINY


cdef inline iv mk(double lo, double hi) nogil:
    cdef iv r
    r.lo = lo
    r.hi = hi
    return r


cdef inline iv _add(iv a, iv b) nogil:
    return mk(_dn(a.lo + b.lo), _upr(a.hi + b.hi))


cdef inline iv _sub(iv a, iv b) nogil:
    return mk(_dn(a.lo - b.hi), _upr(a.hi - b.lo))


cdef inline double _min4(double a, double b, double c, double d) nogil:
    return fmin(fmin(fmin(a, b), c), d)


cdef inline double _max4(double a, double b, double c, double d) nogil:
    return fmax(fmax(fmax(a, b), c), d)


cdef inline iv _mul(iv a, iv b) nogil:
    cdef double p1 = a.lo * b.lo
    cdef double p2 = a.lo * b.hi
    cdef double p3 = a.hi * b.lo
    cdef double p4 = a.hi * b.hi
    return mk(_dn(_min4(p1, p2, p3, p4)), _upr(_max4(p1, p2, p3, p4)))


cdef inline iv _scale(double s, iv a) nogil:
    if s >= 0.0:
        return mk(_dn(s * a.lo), _upr(s * a.hi))
    return mk(_dn(s * a.hi), _upr(s * a.lo))


cdef inline iv _sqr(iv a) nogil:
    cdef double m
    if a.lo >= 0.0:
        return mk(_dn(a.lo * a.lo), _upr(a.hi * a.hi))
    if a.hi <= 0.0:
        return mk(_dn(a.hi * a.hi), _upr(a.lo * a.lo))
    m = fmax(-a.lo, a.hi)
    return mk(0.0, _upr(m * m))


cdef inline bint _crosses(double lo, double hi, double phase) nogil:
    cdef double k = ceil((lo - phase) / TWO_PI - 1e-9)
    return phase + k * TWO_PI <= hi + 1e-9


cdef inline iv _sin(iv a) nogil:
    cdef double s0, s1, lo, hi
    if a.hi - a.lo >= TWO_PI:
        return mk(-1.0, 1.0)
    s0 = sin(a.lo)
    s1 = sin(a.hi)
    lo = _dn(fmin(s0, s1))
    hi = _upr(fmax(s0, s1))
    if _crosses(a.lo, a.hi, HALF_PI):
        hi = 1.0
    if _crosses(a.lo, a.hi, -HALF_PI):
        lo = -1.0
    return mk(fmax(lo, -1.0), fmin(hi, 1.0))


cdef inline iv _cos(iv a) nogil:
    cdef double c0, c1, lo, hi
    if a.hi - a.lo >= TWO_PI:
        return mk(-1.0, 1.0)
    c0 = cos(a.lo)
    c1 = cos(a.hi)
    lo = _dn(fmin(c0, c1))
    hi = _upr(fmax(c0, c1))
    if _crosses(a.lo, a.hi, 0.0):
        hi = 1.0
    if _crosses(a.lo, a.hi, PI):
        lo = -1.0
    return mk(fmax(lo, -1.0), fmin(hi, 1.0))


cdef inline iv _tan(iv a) nogil:
    return mk(_dn(tan(a.lo)), _upr(tan(a.hi)))


cdef inline iv _hull(iv a, iv b) nogil:
    return mk(fmin(a.lo, b.lo), fmax(a.hi, b.hi))


cdef inline iv _meet(iv a, iv b) nogil:
    cdef double lo = fmax(a.lo, b.lo)
    cdef double hi = fmin(a.hi, b.hi)
    if lo > hi:
        return _hull(a, b)
    return mk(lo, hi)


cdef inline bint _within(iv outer, iv inner) nogil:
    return outer.lo <= inner.lo and inner.hi <= outer.hi


cdef inline iv _div_pt(double x, iv d) nogil:
    cdef double q1 = x / d.lo
    cdef double q2 = x / d.hi
    return mk(_dn(fmin(q1, q2)), _upr(fmax(q1, q2)))


cdef inline iv _inflate(iv a, double pad) nogil:
    cdef double w = a.hi - a.lo
    cdef double e = pad * w + 1e-9 * (fabs(a.lo) + fabs(a.hi)) + 1e-12
    return mk(a.lo - e, a.hi + e)


ctypedef struct field:
    double kp
    double kth
    double c
    double v
    double kappa
    double lim


cdef inline iv _steer(field* f, iv P, iv T, iv W, iv* sig) nogil:
    cdef iv phi = _add(_add(_scale(f.kp, P), _scale(f.kth, T)), _add(mk(f.c, f.c), W))
    cdef double lim = f.lim
    cdef double slo = fmin(fmax(phi.lo, -lim), lim)
    cdef double shi = fmin(fmax(phi.hi, -lim), lim)
    if phi.lo >= -lim and phi.hi <= lim:
        sig[0] = mk(1.0, 1.0)
    elif phi.lo >= lim or phi.hi <= -lim:
        sig[0] = mk(0.0, 0.0)
    else:
        sig[0] = mk(0.0, 1.0)
    return mk(slo, shi)


cdef inline void _g(field* f, iv P, iv T, iv W, iv* g0, iv* g1) nogil:
    cdef iv sig
    cdef iv S = _steer(f, P, T, W, &sig)
    g0[0] = _scale(f.v, _sin(T))
    g1[0] = _scale(f.kappa, _tan(S))


cdef inline void _jac(field* f, iv P, iv T, iv W, iv* j01, iv* j10, iv* j11, iv* jw) nogil:
    cdef iv sig
    cdef iv S = _steer(f, P, T, W, &sig)
    cdef iv sec2
    j01[0] = _scale(f.v, _cos(T))
    if sig.hi == 0.0:
        j10[0] = mk(0.0, 0.0)
        j11[0] = mk(0.0, 0.0)
        jw[0] = mk(0.0, 0.0)
        return
    sec2 = _add(mk(1.0, 1.0), _sqr(_tan(S)))
    jw[0] = _mul(_scale(f.kappa, sec2), sig)
    j10[0] = _scale(f.kp, jw[0])
    j11[0] = _scale(f.kth, jw[0])


def reach_kernel(box0, double kp, double kth, double c, double wlo, double whi,
                 double v, double L, double phi_lim, gamma, double horizon,
                 int n_sub, int max_picard):
    cdef field fld
    fld.kp = kp
    fld.kth = kth
    fld.c = c
    fld.v = v
    fld.kappa = v / L
    fld.lim = phi_lim

    cdef double h = horizon / n_sub
    cdef iv hI = mk(0.0, h)
    cdef iv W = mk(wlo, whi)
    cdef double w0 = 0.5 * (wlo + whi)
    cdef iv Wc = mk(_dn(wlo - w0), _upr(whi - w0))
    cdef iv W0 = mk(w0, w0)

    cdef iv P = mk(box0[0], box0[1])
    cdef iv T = mk(box0[2], box0[3])
    cdef double xh0 = 0.5 * (P.lo + P.hi)
    cdef double xh1 = 0.5 * (T.lo + T.hi)
    cdef double m00 = 1.0, m01 = 0.0, m10 = 0.0, m11 = 1.0
    cdef iv Z0 = mk(_dn(P.lo - xh0), _upr(P.hi - xh0))
    cdef iv Z1 = mk(_dn(T.lo - xh1), _upr(T.hi - xh1))
    cdef iv gP = mk(gamma[0], gamma[1])
    cdef iv gT = mk(gamma[2], gamma[3])

    steps_arr = np.empty((n_sub, 4))
    cdef double[:, ::1] steps = steps_arr
    cdef int status = OK
    cdef int n_done = 0
    cdef int k, it
    cdef bint ok, good
    cdef double pad, n00, n01, n10, n11, norm, mag, nx0, nx1
    cdef iv G0, G1, E0, E1, A0, A1, N0, N1, S0, S1
    cdef iv j01, j10, j11, jw, dummy1, dummy2, dummy3
    cdef iv D0, D1, X0, X1, f0, f1, F0, F1, PJ, TJ
    cdef iv a01, a10, a11, b00, b01, b10, b11, det
    cdef iv i00, i01, i10, i11, r0, r1, c00, c01, c10, c11, nZ0, nZ1
    cdef iv Q0, Q1, H0, H1

    with nogil:
        for k in range(n_sub):
            _g(&fld, P, T, W, &G0, &G1)
            E0 = _add(P, _mul(hI, G0))
            E1 = _add(T, _mul(hI, G1))
            pad = 0.05
            ok = False
            for it in range(max_picard):
                A0 = _inflate(E0, pad)
                A1 = _inflate(E1, pad)
                _g(&fld, A0, A1, W, &G0, &G1)
                N0 = _add(P, _mul(hI, G0))
                N1 = _add(T, _mul(hI, G1))
                if _within(A0, N0) and _within(A1, N1):
                    E0 = N0
                    E1 = N1
                    ok = True
                    break
                E0 = N0
                E1 = N1
                pad = pad * 2.0
            if not ok:
                status = DIVERGED
                break
            for it in range(2):
                _g(&fld, E0, E1, W, &G0, &G1)
                E0 = _meet(E0, _add(P, _mul(hI, G0)))
                E1 = _meet(E1, _add(T, _mul(hI, G1)))
            steps[k, 0] = E0.lo
            steps[k, 1] = E0.hi
            steps[k, 2] = E1.lo
            steps[k, 3] = E1.hi
            n_done = k + 1
            if not (_within(gP, E0) and _within(gT, E1)):
                status = EXITED
                break

            _g(&fld, E0, E1, W, &G0, &G1)
            S0 = _mul(hI, G0)
            S1 = _mul(hI, G1)
            _jac(&fld, E0, E1, W, &j01, &j10, &j11, &dummy1)
            _jac(&fld, P, T, W, &dummy1, &dummy2, &dummy3, &jw)
            D0 = _scale(h, _mul(j01, S1))
            D1 = _add(_scale(h, _add(_mul(j10, S0), _mul(j11, S1))), _scale(h, _mul(jw, Wc)))

            X0 = mk(xh0, xh0)
            X1 = mk(xh1, xh1)
            _g(&fld, X0, X1, W0, &f0, &f1)
            F0 = _add(X0, _scale(h, f0))
            F1 = _add(X1, _scale(h, f1))

            PJ = _hull(P, X0)
            TJ = _hull(T, X1)
            _jac(&fld, PJ, TJ, W0, &a01, &a10, &a11, &dummy1)
            a01 = _scale(h, a01)
            a10 = _scale(h, a10)
            a11 = _add(mk(1.0, 1.0), _scale(h, a11))
            b00 = _add(mk(m00, m00), _scale(m10, a01))
            b01 = _add(mk(m01, m01), _scale(m11, a01))
            b10 = _add(_scale(m00, a10), _scale(m10, a11))
            b11 = _add(_scale(m01, a10), _scale(m11, a11))

            n00 = 0.5 * (b00.lo + b00.hi)
            n01 = 0.5 * (b01.lo + b01.hi)
            n10 = 0.5 * (b10.lo + b10.hi)
            n11 = 0.5 * (b11.lo + b11.hi)
            det = _sub(mk(n00 * n11, n00 * n11), mk(n01 * n10, n01 * n10))
            det = mk(_dn(det.lo), _upr(det.hi))
            norm = fabs(n00) + fabs(n01) + fabs(n10) + fabs(n11)
            if det.lo > 0.0 or det.hi < 0.0:
                mag = fmin(fabs(det.lo), fabs(det.hi))
                good = norm * norm < 1e10 * mag
            else:
                good = False
            if good:
                i00 = _div_pt(n11, det)
                i01 = _div_pt(-n01, det)
                i10 = _div_pt(-n10, det)
                i11 = _div_pt(n00, det)
            else:
                n00 = 1.0
                n01 = 0.0
                n10 = 0.0
                n11 = 1.0
                i00 = mk(1.0, 1.0)
                i01 = mk(0.0, 0.0)
                i10 = mk(0.0, 0.0)
                i11 = mk(1.0, 1.0)

            nx0 = 0.5 * (F0.lo + F0.hi)
            nx1 = 0.5 * (F1.lo + F1.hi)
            r0 = _add(_sub(F0, mk(nx0, nx0)), D0)
            r1 = _add(_sub(F1, mk(nx1, nx1)), D1)
            c00 = _add(_mul(i00, b00), _mul(i01, b10))
            c01 = _add(_mul(i00, b01), _mul(i01, b11))
            c10 = _add(_mul(i10, b00), _mul(i11, b10))
            c11 = _add(_mul(i10, b01), _mul(i11, b11))
            nZ0 = _add(_add(_mul(i00, r0), _mul(i01, r1)), _add(_mul(c00, Z0), _mul(c01, Z1)))
            nZ1 = _add(_add(_mul(i10, r0), _mul(i11, r1)), _add(_mul(c10, Z0), _mul(c11, Z1)))

            xh0 = nx0
            xh1 = nx1
            m00 = n00
            m01 = n01
            m10 = n10
            m11 = n11
            Z0 = nZ0
            Z1 = nZ1

            Q0 = _add(mk(xh0, xh0), _add(_scale(m00, Z0), _scale(m01, Z1)))
            Q1 = _add(mk(xh1, xh1), _add(_scale(m10, Z0), _scale(m11, Z1)))
            H0 = _add(P, _scale(h, G0))
            H1 = _add(T, _scale(h, G1))
            P = _meet(_meet(Q0, E0), H0)
            T = _meet(_meet(Q1, E1), H1)

    final = np.array([P.lo, P.hi, T.lo, T.hi])
    return steps_arr, final, status, n_done


# -- network ---------------------------------------------------------------

cdef void _forward_row(const double* x, double* buf_a, double* buf_b,
                       const double* W, const double* B, const long* dims,
                       const unsigned char* relu, int n_layers, double* out) nogil:
    # four output rows at a time give independent accumulation chains; each
    # output still sums its inputs in order, matching the numpy fallback
    cdef int l, j, k, din, dout
    cdef long woff = 0, boff = 0
    cdef double* src = buf_a
    cdef double* dst = buf_b
    cdef double* tmp
    cdef const double* w0
    cdef const double* w1
    cdef const double* w2
    cdef const double* w3
    cdef double a0, a1, a2, a3, s
    for k in range(dims[0]):
        src[k] = x[k]
    for l in range(n_layers):
        din = dims[l]
        dout = dims[l + 1]
        j = 0
        while j + 4 <= dout:
            w0 = W + woff + j * din
            w1 = w0 + din
            w2 = w1 + din
            w3 = w2 + din
            a0 = B[boff + j]
            a1 = B[boff + j + 1]
            a2 = B[boff + j + 2]
            a3 = B[boff + j + 3]
            for k in range(din):
                s = src[k]
                a0 = a0 + w0[k] * s
                a1 = a1 + w1[k] * s
                a2 = a2 + w2[k] * s
                a3 = a3 + w3[k] * s
            dst[j] = a0
            dst[j + 1] = a1
            dst[j + 2] = a2
            dst[j + 3] = a3
            j += 4
        while j < dout:
            w0 = W + woff + j * din
            a0 = B[boff + j]
            for k in range(din):
                a0 = a0 + w0[k] * src[k]
            dst[j] = a0
            j += 1
        if relu[l]:
            for j in range(dout):
                if dst[j] < 0.0:
                    dst[j] = 0.0
        woff += din * dout
        boff += dout
        tmp = src
        src = dst
        dst = tmp
    for j in range(dims[n_layers]):
        out[j] = src[j]


def _pack(weights, biases, relu):
    dims = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    W = np.ascontiguousarray(np.concatenate([np.ascontiguousarray(w, dtype=np.float64).ravel() for w in weights]))
    B = np.ascontiguousarray(np.concatenate([np.asarray(b, dtype=np.float64) for b in biases]))
    D = np.asarray(dims, dtype=np.int64)
    R = np.asarray([1 if r else 0 for r in relu], dtype=np.uint8)
    return W, B, D, R, max(dims)


def mlp_forward(x, weights, biases, relu):
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    Wa, Ba, Da, Ra, width = _pack(weights, biases, relu)
    cdef double[::1] W = Wa
    cdef double[::1] B = Ba
    cdef long[::1] D = Da
    cdef unsigned char[::1] R = Ra
    cdef int n_layers = len(weights)
    cdef int n = X.shape[0]
    cdef int dout = D[n_layers]
    out_arr = np.empty((n, dout))
    cdef double[:, ::1] out = out_arr
    cdef int i
    cdef int wmax = width
    cdef double* ba = <double*> malloc(wmax * sizeof(double))
    cdef double* bb = <double*> malloc(wmax * sizeof(double))
    try:
        with nogil:
            for i in range(n):
                _forward_row(&X[i, 0], ba, bb, &W[0], &B[0], &D[0], &R[0], n_layers, &out[i, 0])
    finally:
        free(ba)
        free(bb)
    return out_arr


# -- closed-loop simulation -----------------------------------------------

cdef inline double _steer_pt(double p, double th, const double* lat, int n_lat,
                             double* inp, double* ba, double* bb,
                             const double* W, const double* B, const long* D,
                             const unsigned char* R, int n_layers,
                             double phi_lim, bint* sat) nogil:
    cdef int j
    cdef double phi
    inp[0] = p
    inp[1] = th * DEG
    for j in range(n_lat):
        inp[2 + j] = lat[j]
    _forward_row(inp, ba, bb, W, B, D, R, n_layers, &phi)
    phi = phi / DEG
    if fabs(phi) > phi_lim:
        sat[0] = True
    return fmin(fmax(phi, -phi_lim), phi_lim)


def simulate_batch(x0, weights, biases, relu, latents, double v, double L,
                   double phi_lim, double h, int n_steps, int hold_every):
    cdef double[:, ::1] X0 = np.ascontiguousarray(x0, dtype=np.float64)
    Wa, Ba, Da, Ra, width = _pack(weights, biases, relu)
    cdef double[::1] W = Wa
    cdef double[::1] B = Ba
    cdef long[::1] D = Da
    cdef unsigned char[::1] R = Ra
    cdef int n_layers = len(weights)
    cdef int n = X0.shape[0]
    cdef int n_lat = 0
    cdef double[:, :, ::1] LAT
    if latents is not None:
        LAT = np.ascontiguousarray(latents, dtype=np.float64)
        n_lat = LAT.shape[2]
    traj_arr = np.empty((n, n_steps + 1, 2))
    phis_arr = np.empty((n, n_steps))
    sat_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, :, ::1] traj = traj_arr
    cdef double[:, ::1] phis = phis_arr
    cdef unsigned char[::1] satv = sat_arr
    cdef double kappa = v / L
    cdef int wmax = width
    cdef double* ba = <double*> malloc(wmax * sizeof(double))
    cdef double* bb = <double*> malloc(wmax * sizeof(double))
    cdef double* inp = <double*> malloc(wmax * sizeof(double))
    cdef int i, k
    cdef double p, th, phi, held, k1p, k1t, k2p, k2t, k3p, k3t, k4p, k4t
    cdef double p2, p3, p4
    cdef double hh = 0.5 * h
    cdef const double* lat
    cdef double zero = 0.0
    cdef bint sat
    try:
        with nogil:
            for i in range(n):
                p = X0[i, 0]
                th = X0[i, 1]
                traj[i, 0, 0] = p
                traj[i, 0, 1] = th
                sat = False
                held = 0.0
                for k in range(n_steps):
                    if n_lat > 0:
                        lat = &LAT[i, k, 0]
                    else:
                        lat = &zero
                    if hold_every > 0:
                        if k % hold_every == 0:
                            held = _steer_pt(p, th, lat, n_lat, inp, ba, bb, &W[0], &B[0], &D[0], &R[0], n_layers, phi_lim, &sat)
                        phi = held
                        p2 = phi
                        p3 = phi
                        p4 = phi
                    else:
                        phi = _steer_pt(p, th, lat, n_lat, inp, ba, bb, &W[0], &B[0], &D[0], &R[0], n_layers, phi_lim, &sat)
                    k1p = v * sin(th)
                    k1t = kappa * tan(phi)
                    if hold_every == 0:
                        p2 = _steer_pt(p + hh * k1p, th + hh * k1t, lat, n_lat, inp, ba, bb, &W[0], &B[0], &D[0], &R[0], n_layers, phi_lim, &sat)
                    k2p = v * sin(th + hh * k1t)
                    k2t = kappa * tan(p2)
                    if hold_every == 0:
                        p3 = _steer_pt(p + hh * k2p, th + hh * k2t, lat, n_lat, inp, ba, bb, &W[0], &B[0], &D[0], &R[0], n_layers, phi_lim, &sat)
                    k3p = v * sin(th + hh * k2t)
                    k3t = kappa * tan(p3)
                    if hold_every == 0:
                        p4 = _steer_pt(p + h * k3p, th + h * k3t, lat, n_lat, inp, ba, bb, &W[0], &B[0], &D[0], &R[0], n_layers, phi_lim, &sat)
                    k4p = v * sin(th + h * k3t)
                    k4t = kappa * tan(p4)
                    phis[i, k] = phi
                    p = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
                    th = th + (h / 6.0) * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
                    traj[i, k + 1, 0] = p
                    traj[i, k + 1, 1] = th
                satv[i] = sat
    finally:
        free(ba)
        free(bb)
        free(inp)
    return traj_arr, phis_arr, sat_arr.astype(bool)
