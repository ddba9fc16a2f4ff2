"""Pure numpy implementation of the hot kernels.

Mirrors ``_kernels.pyx`` operation for operation so the two backends agree to
rounding. Every function here is vectorised over leading array axes; the
Cython module loops instead.
"""
import numpy as np

PI = np.pi
NAME = "python"

# q = |x3| / rho**2 below which the planar expansion d = rho (1 + 6 q^2) is exact
# to machine precision.
_Q_PLANAR = 1e-10
# rho below which a point is treated as lying on the vertical axis.
_RHO_AXIS = 1e-8
_Q_SPLIT = PI / 8.0
_MAX_ITER = 100
_SERIES_CUT = 0.05


def ipow(x, n):
    """Integer power by repeated multiplication (bit-identical to the C loop)."""
    out = np.ones_like(x)
    for _ in range(n):
        out = out * x
    return out


def _numer_theta(theta):
    # 2t - sin(2t), with a series near 0 to avoid cancellation
    s = 2.0 * theta
    s2 = s * s
    series = s * s2 * (1.0 / 6.0 - s2 * (1.0 / 120.0 - s2 * (1.0 / 5040.0 - s2 * (1.0 / 362880.0 - s2 / 39916800.0))))
    return np.where(theta < _SERIES_CUT, series, s - np.sin(s))


def _solve_theta(q):
    """Root of (2t - sin 2t) / (8 sin^2 t) = q on (0, pi/2]; q <= pi/8."""
    lo = np.zeros_like(q)
    hi = np.full_like(q, PI / 2.0)
    t = np.minimum(6.0 * q, PI / 2.0)
    done = np.zeros(q.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        st = np.sin(t)
        ct = np.cos(t)
        num = _numer_theta(t)
        f = num / (8.0 * st * st)
        fp = 0.5 - num * ct / (4.0 * st * st * st)
        above = f > q
        hi = np.where(above & ~done, t, hi)
        lo = np.where(~above & ~done, t, lo)
        tn = t - (f - q) / fp
        bad = ~((tn > lo) & (tn < hi))
        tn = np.where(bad, 0.5 * (lo + hi), tn)
        conv = np.abs(tn - t) <= 4e-16 * t
        t = np.where(done, t, tn)
        done = done | conv
        if done.all():
            break
    return t, done


def _solve_phi(q):
    """Root in phi = pi - t of (2pi - 2phi + sin 2phi) / (8 sin^2 phi) = q; q > pi/8."""
    lo = np.zeros_like(q)
    hi = np.full_like(q, PI / 2.0)
    ph = np.minimum(np.sqrt(PI / (4.0 * q)), PI / 2.0)
    done = np.zeros(q.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        sp = np.sin(ph)
        cp = np.cos(ph)
        num = 2.0 * PI - 2.0 * ph + np.sin(2.0 * ph)
        f = num / (8.0 * sp * sp)
        fp = -0.5 - num * cp / (4.0 * sp * sp * sp)
        above = f > q
        lo = np.where(above & ~done, ph, lo)
        hi = np.where(~above & ~done, ph, hi)
        pn = ph - (f - q) / fp
        bad = ~((pn > lo) & (pn < hi))
        pn = np.where(bad, 0.5 * (lo + hi), pn)
        conv = np.abs(pn - ph) <= 4e-16 * ph
        ph = np.where(done, ph, pn)
        done = done | conv
        if done.all():
            break
    return ph, done


def geodesic_angle(rho, z):
    """Half the total turning angle ``t`` of the minimising arc to (rho, z).

    Returns ``(t, ok)`` arrays. ``z`` must be nonnegative. Planar points give
    ``t = 0`` and axis points ``t = pi``.
    """
    rho = np.asarray(rho, dtype=float)
    z = np.asarray(z, dtype=float)
    t = np.zeros(np.broadcast(rho, z).shape)
    ok = np.ones(t.shape, dtype=bool)
    axis = rho < _RHO_AXIS
    safe_rho = np.where(axis, 1.0, rho)
    q = np.where(axis, 0.0, z / (safe_rho * safe_rho))
    t = np.where(axis & (z > 0), PI, t)
    lower = ~axis & (q >= _Q_PLANAR) & (q <= _Q_SPLIT)
    upper = ~axis & (q > _Q_SPLIT)
    if lower.any():
        tl, okl = _solve_theta(q[lower])
        t[lower] = tl
        ok[lower] = okl
    if upper.any():
        ph, oku = _solve_phi(q[upper])
        t[upper] = PI - ph
        ok[upper] = oku
    planar = ~axis & (q < _Q_PLANAR)
    t = np.where(planar, 6.0 * q, t)
    return t, ok


def cc_distance(x):
    """Carnot-Caratheodory distance to the identity for points ``x[..., 3]``.

    Non-converged entries are returned as NaN.
    """
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    x2 = x[..., 1]
    c = np.sqrt(x1 * x1 + x2 * x2)
    z = np.abs(x[..., 2])
    out = np.array(c, dtype=float, copy=True)
    out = np.atleast_1d(out)
    c1 = np.atleast_1d(c)
    z1 = np.atleast_1d(z)
    axis = (z1 != 0.0) & (c1 < _RHO_AXIS)
    out[axis] = 2.0 * np.sqrt(PI * z1[axis])
    gen = (z1 != 0.0) & ~axis
    if gen.any():
        cg = c1[gen]
        q = z1[gen] / (cg * cg)
        res = np.empty_like(q)
        planar = q < _Q_PLANAR
        res[planar] = cg[planar] * (1.0 + 6.0 * q[planar] * q[planar])
        lower = ~planar & (q <= _Q_SPLIT)
        if lower.any():
            t, ok = _solve_theta(q[lower])
            val = cg[lower] * t / np.sin(t)
            res[lower] = np.where(ok, val, np.nan)
        upper = q > _Q_SPLIT
        if upper.any():
            ph, ok = _solve_phi(q[upper])
            val = cg[upper] * (PI - ph) / np.sin(ph)
            res[upper] = np.where(ok, val, np.nan)
        out[gen] = res
    return out.reshape(np.shape(c))


def distance(x, kind):
    """Distance to the identity; ``kind`` 0 = line (x[..., 1]), 1 = Heisenberg."""
    x = np.asarray(x, dtype=float)
    if kind == 0:
        return np.abs(x[..., 0])
    return cc_distance(x)


def group_mul(x, y, kind):
    if kind == 0:
        return x + y
    out = x + y
    out[..., 2] += 0.5 * (x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0])
    return out


def sweep_parity(spins, dist, parity, kind, p, r, delta, steps, u):
    """In-place Metropolis update of every site of one checkerboard class.

    ``spins`` has shape (R, H+2, W+2, dim) with the frozen boundary in the
    outer ring; ``dist`` caches the distances of ``spins``. ``steps`` holds the
    proposal increments, shape (R, H, W, m_in, dim), and ``u`` the acceptance
    uniforms, shape (R, H, W, m_in). Returns the number of accepted moves.
    """
    R, Hp, Wp, dim = spins.shape
    H, W = Hp - 2, Wp - 2
    rows, cols = np.nonzero((np.add.outer(np.arange(H), np.arange(W)) % 2) == parity)
    if rows.size == 0:
        return 0
    a = rows + 1
    b = cols + 1
    x = spins[:, a, b, :].copy()
    dx = dist[:, a, b].copy()
    n_up = dist[:, a - 1, b]
    n_dn = dist[:, a + 1, b]
    n_lf = dist[:, a, b - 1]
    n_rt = dist[:, a, b + 1]
    st = steps[:, rows, cols]
    uu = u[:, rows, cols]
    m_in = steps.shape[3]
    accepted = 0

    def site_energy(d):
        inter = ipow(d + n_up, r) + ipow(d + n_dn, r) + ipow(d + n_lf, r) + ipow(d + n_rt, r)
        return ipow(d, p) + delta * inter

    e_old = site_energy(dx)
    with np.errstate(over="ignore"):
        for k in range(m_in):
            y = group_mul(x, st[:, :, k, :], kind)
            dy = distance(y, kind)
            e_new = site_energy(dy)
            acc = uu[:, :, k] < np.exp(e_old - e_new)
            accepted += int(acc.sum())
            x = np.where(acc[..., None], y, x)
            dx = np.where(acc, dy, dx)
            e_old = np.where(acc, e_new, e_old)
    spins[:, a, b, :] = x
    dist[:, a, b] = dx
    return accepted


def resample_exact_line(spins, parity, p, r, delta, y, U):
    """Exact (grid inverse-CDF) resampling of one parity class of line spins.

    The conditional density at each site is tabulated on the increasing
    nodes ``y``, integrated with the trapezoid rule, and inverted at the
    uniforms ``U`` (shape (R, H, W)) by linear interpolation. Common
    uniforms give a monotone coupling of chains with different neighbours.
    """
    R, Hp, Wp, _ = spins.shape
    H, W = Hp - 2, Wp - 2
    rows, cols = np.nonzero((np.add.outer(np.arange(H), np.arange(W)) % 2) == parity)
    if rows.size == 0:
        return
    a = rows + 1
    b = cols + 1
    d = np.abs(spins[..., 0])
    nb = (d[:, a - 1, b], d[:, a + 1, b], d[:, a, b - 1], d[:, a, b + 1])
    dy = np.abs(y)
    e = ipow(dy, p)[None, None, :] + delta * sum(ipow(dy[None, None, :] + n[..., None], r) for n in nb)
    e = e - e.min(axis=-1, keepdims=True)
    w = np.exp(-e)
    inc = 0.5 * (w[..., 1:] + w[..., :-1]) * np.diff(y)
    c = np.concatenate([np.zeros(w.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    u = U[:, rows, cols] * c[..., -1]
    k = np.clip(np.sum(c < u[..., None], axis=-1), 1, len(y) - 1)
    c0 = np.take_along_axis(c, (k - 1)[..., None], -1)[..., 0]
    c1 = np.take_along_axis(c, k[..., None], -1)[..., 0]
    t = (u - c0) / (c1 - c0)
    spins[:, a, b, 0] = y[k - 1] + t * (y[k] - y[k - 1])
