# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: CC distance solver and checkerboard Metropolis sweep.

Same algorithms as ``_kernels_py``; see that module for the array contracts.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs, exp, M_PI, NAN

cnp.import_array()

NAME = "cython"

cdef double _Q_PLANAR = 1e-10
cdef double _RHO_AXIS = 1e-8
cdef double _Q_SPLIT = M_PI / 8.0
cdef int _MAX_ITER = 100
cdef double _SERIES_CUT = 0.05


cdef inline double _ipow(double x, int n) nogil:
    cdef double out = 1.0
    cdef int i
    for i in range(n):
        out = out * x
    return out


cdef inline double _numer_theta(double t) nogil:
    cdef double s = 2.0 * t
    cdef double s2 = s * s
    if t < _SERIES_CUT:
        return s * s2 * (1.0 / 6.0 - s2 * (1.0 / 120.0 - s2 * (1.0 / 5040.0 - s2 * (1.0 / 362880.0 - s2 / 39916800.0))))
    return s - sin(s)


cdef double _solve_theta(double q, int* ok) nogil:
    cdef double lo = 0.0, hi = M_PI / 2.0
    cdef double t = 6.0 * q
    cdef double st, ct, num, f, fp, tn
    cdef int it
    if t > M_PI / 2.0:
        t = M_PI / 2.0
    ok[0] = 0
    for it in range(_MAX_ITER):
        st = sin(t)
        ct = cos(t)
        num = _numer_theta(t)
        f = num / (8.0 * st * st)
        fp = 0.5 - num * ct / (4.0 * st * st * st)
        if f > q:
            hi = t
        else:
            lo = t
        tn = t - (f - q) / fp
        if not (tn > lo and tn < hi):
            tn = 0.5 * (lo + hi)
        if fabs(tn - t) <= 4e-16 * t:
            t = tn
            ok[0] = 1
            break
        t = tn
    return t


cdef double _solve_phi(double q, int* ok) nogil:
    cdef double lo = 0.0, hi = M_PI / 2.0
    cdef double ph = sqrt(M_PI / (4.0 * q))
    cdef double sp, cp, num, f, fp, pn
    cdef int it
    if ph > M_PI / 2.0:
        ph = M_PI / 2.0
    ok[0] = 0
    for it in range(_MAX_ITER):
        sp = sin(ph)
        cp = cos(ph)
        num = 2.0 * M_PI - 2.0 * ph + sin(2.0 * ph)
        f = num / (8.0 * sp * sp)
        fp = -0.5 - num * cp / (4.0 * sp * sp * sp)
        if f > q:
            lo = ph
        else:
            hi = ph
        pn = ph - (f - q) / fp
        if not (pn > lo and pn < hi):
            pn = 0.5 * (lo + hi)
        if fabs(pn - ph) <= 4e-16 * ph:
            ph = pn
            ok[0] = 1
            break
        ph = pn
    return ph


cdef double _cc(double x1, double x2, double x3) nogil:
    cdef double c = sqrt(x1 * x1 + x2 * x2)
    cdef double z = fabs(x3)
    cdef double q, t, ph
    cdef int ok = 1
    if z == 0.0:
        return c
    if c < _RHO_AXIS:
        return 2.0 * sqrt(M_PI * z)
    q = z / (c * c)
    if q < _Q_PLANAR:
        return c * (1.0 + 6.0 * q * q)
    if q <= _Q_SPLIT:
        t = _solve_theta(q, &ok)
        if not ok:
            return NAN
        return c * t / sin(t)
    ph = _solve_phi(q, &ok)
    if not ok:
        return NAN
    return c * (M_PI - ph) / sin(ph)


def cc_distance(x):
    """Carnot-Caratheodory distance to the identity for points ``x[..., 3]``."""
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    shape = arr.shape[:-1]
    cdef double[:, ::1] flat = arr.reshape(-1, 3)
    cdef Py_ssize_t n = flat.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _cc(flat[i, 0], flat[i, 1], flat[i, 2])
    return out.reshape(shape)


def distance(x, int kind):
    if kind == 0:
        return np.abs(np.asarray(x, dtype=np.float64)[..., 0])
    return cc_distance(x)


def group_mul(x, y, int kind):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if kind == 0:
        return x + y
    out = x + y
    out[..., 2] += 0.5 * (x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0])
    return out


cdef inline double _site_energy(double d, double n0, double n1, double n2, double n3,
                                int p, int r, double delta) nogil:
    cdef double inter = _ipow(d + n0, r) + _ipow(d + n1, r) + _ipow(d + n2, r) + _ipow(d + n3, r)
    return _ipow(d, p) + delta * inter


def sweep_parity(double[:, :, :, ::1] spins, double[:, :, ::1] dist, int parity, int kind,
                 int p, int r, double delta, double[:, :, :, :, ::1] steps, double[:, :, :, ::1] u):
    """In-place Metropolis update of one checkerboard class; returns accepts."""
    cdef Py_ssize_t R = spins.shape[0]
    cdef Py_ssize_t H = spins.shape[1] - 2
    cdef Py_ssize_t W = spins.shape[2] - 2
    cdef Py_ssize_t dim = spins.shape[3]
    cdef Py_ssize_t m_in = steps.shape[3]
    cdef Py_ssize_t rep, i, j, k, a, b
    cdef double x0, x1, x2, y0, y1, y2, s0, s1, s2
    cdef double dx, dy, e_old, e_new, n_up, n_dn, n_lf, n_rt
    cdef long accepted = 0
    with nogil:
        for rep in range(R):
            for i in range(H):
                for j in range(W):
                    if (i + j) % 2 != parity:
                        continue
                    a = i + 1
                    b = j + 1
                    n_up = dist[rep, a - 1, b]
                    n_dn = dist[rep, a + 1, b]
                    n_lf = dist[rep, a, b - 1]
                    n_rt = dist[rep, a, b + 1]
                    x0 = spins[rep, a, b, 0]
                    if kind == 1:
                        x1 = spins[rep, a, b, 1]
                        x2 = spins[rep, a, b, 2]
                    dx = dist[rep, a, b]
                    e_old = _site_energy(dx, n_up, n_dn, n_lf, n_rt, p, r, delta)
                    for k in range(m_in):
                        s0 = steps[rep, i, j, k, 0]
                        if kind == 0:
                            y0 = x0 + s0
                            dy = fabs(y0)
                        else:
                            s1 = steps[rep, i, j, k, 1]
                            s2 = steps[rep, i, j, k, 2]
                            y0 = x0 + s0
                            y1 = x1 + s1
                            y2 = x2 + s2
                            y2 = y2 + 0.5 * (x0 * s1 - x1 * s0)
                            dy = _cc(y0, y1, y2)
                        e_new = _site_energy(dy, n_up, n_dn, n_lf, n_rt, p, r, delta)
                        if u[rep, i, j, k] < exp(e_old - e_new):
                            accepted += 1
                            x0 = y0
                            if kind == 1:
                                x1 = y1
                                x2 = y2
                            dx = dy
                            e_old = e_new
                    spins[rep, a, b, 0] = x0
                    if kind == 1:
                        spins[rep, a, b, 1] = x1
                        spins[rep, a, b, 2] = x2
                    dist[rep, a, b] = dx
    return accepted


def resample_exact_line(double[:, :, :, ::1] spins, int parity, int p, int r, double delta,
                        double[::1] y, double[:, :, ::1] U):
    """Exact (grid inverse-CDF) resampling of one parity class of line spins."""
    cdef Py_ssize_t R = spins.shape[0]
    cdef Py_ssize_t H = spins.shape[1] - 2
    cdef Py_ssize_t W = spins.shape[2] - 2
    cdef Py_ssize_t m = y.shape[0]
    cdef Py_ssize_t rep, i, j, k, a, b, lo, hi, mid
    cdef double n0, n1, n2, n3, dy, emin, u, t
    work = np.empty(m, dtype=np.float64)
    cum = np.empty(m, dtype=np.float64)
    cdef double[::1] e = work
    cdef double[::1] c = cum
    with nogil:
        for rep in range(R):
            for i in range(H):
                for j in range(W):
                    if (i + j) % 2 != parity:
                        continue
                    a = i + 1
                    b = j + 1
                    n0 = fabs(spins[rep, a - 1, b, 0])
                    n1 = fabs(spins[rep, a + 1, b, 0])
                    n2 = fabs(spins[rep, a, b - 1, 0])
                    n3 = fabs(spins[rep, a, b + 1, 0])
                    emin = 1e308
                    for k in range(m):
                        dy = fabs(y[k])
                        e[k] = _ipow(dy, p) + delta * (_ipow(dy + n0, r) + _ipow(dy + n1, r)
                                                       + _ipow(dy + n2, r) + _ipow(dy + n3, r))
                        if e[k] < emin:
                            emin = e[k]
                    for k in range(m):
                        e[k] = exp(-(e[k] - emin))
                    c[0] = 0.0
                    for k in range(1, m):
                        c[k] = c[k - 1] + 0.5 * (e[k] + e[k - 1]) * (y[k] - y[k - 1])
                    u = U[rep, i, j] * c[m - 1]
                    # first index with c[k] >= u, clipped to [1, m-1]
                    lo = 0
                    hi = m
                    while lo < hi:
                        mid = (lo + hi) // 2
                        if c[mid] < u:
                            lo = mid + 1
                        else:
                            hi = mid
                    k = lo
                    if k < 1:
                        k = 1
                    if k > m - 1:
                        k = m - 1
                    t = (u - c[k - 1]) / (c[k] - c[k - 1])
                    spins[rep, a, b, 0] = y[k - 1] + t * (y[k] - y[k - 1])
