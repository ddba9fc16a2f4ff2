"""Group law, distance and horizontal calculus on the two spin spaces.

Points are numpy arrays whose last axis holds the coordinates (length 1 on
the line, length 3 on the Heisenberg group ``H1``); every function accepts
batches along the leading axes. The group law on ``H1`` is

    x . y = (x1 + y1, x2 + y2, x3 + y3 + (x1 y2 - x2 y1) / 2),

with left-invariant horizontal fields ``X1 = d1 - x2/2 d3`` and
``X2 = d2 + x1/2 d3``. The flow of ``Xk`` for time ``t`` is right
multiplication by ``t e_k``, which is what the finite differences use.
"""
from __future__ import annotations

import enum

import numpy as np

from ._backend import kernels, python_kernels


class CCSolverError(RuntimeError):
    """The geodesic root-finder did not converge for some point."""

    def __init__(self, points):
        self.points = np.atleast_2d(points)
        super().__init__(f"CC distance solver failed to converge at {self.points[:5].tolist()}")


class SpinSpace(enum.Enum):
    LINE = "line"
    HEISENBERG1 = "heisenberg1"

    @property
    def dim(self) -> int:
        return 1 if self is SpinSpace.LINE else 3

    @property
    def n_generators(self) -> int:
        return 1 if self is SpinSpace.LINE else 2

    @property
    def kind(self) -> int:
        # integer code understood by the kernels
        return 0 if self is SpinSpace.LINE else 1

    @classmethod
    def parse(cls, value) -> "SpinSpace":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        aliases = {"line": cls.LINE, "r1": cls.LINE, "real": cls.LINE,
                   "heisenberg1": cls.HEISENBERG1, "heisenberg": cls.HEISENBERG1, "h1": cls.HEISENBERG1}
        if key not in aliases:
            raise ValueError(f"unknown spin space {value!r}")
        return aliases[key]


def as_points(x, space: SpinSpace) -> np.ndarray:
    """Validate and convert to a float array with trailing coordinate axis."""
    arr = np.asarray(x, dtype=float)
    if space is SpinSpace.LINE and arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != space.dim:
        raise ValueError(f"expected {space.dim} coordinates for {space.value}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("spin coordinates must be finite")
    return arr


def identity(space: SpinSpace) -> np.ndarray:
    return np.zeros(space.dim)


def mul(x, y, space: SpinSpace) -> np.ndarray:
    """Group product ``x . y``."""
    x = as_points(x, space)
    y = as_points(y, space)
    return kernels.group_mul(x, y, space.kind)


def inv(x, space: SpinSpace) -> np.ndarray:
    """Group inverse; coordinatewise negation in both spaces."""
    return -as_points(x, space)


def dilate(x, lam: float) -> np.ndarray:
    """Heisenberg dilation (l x1, l x2, l^2 x3)."""
    x = np.asarray(x, dtype=float)
    return x * np.array([lam, lam, lam * lam])


def metric_d(x, space: SpinSpace) -> np.ndarray:
    """Distance from ``x`` to the identity (CC distance on ``H1``).

    Raises CCSolverError instead of returning unconverged values.
    """
    x = as_points(x, space)
    if space is SpinSpace.LINE:
        return np.abs(x[..., 0])
    d = kernels.cc_distance(x)
    bad = np.isnan(d)
    if np.any(bad):
        raise CCSolverError(x[bad])
    return d


def default_step(x, space: SpinSpace, scale: float = 1e-4) -> np.ndarray:
    """Finite-difference step ``scale * (1 + d(x))``."""
    return scale * (1.0 + metric_d(x, space))


def _check_step(h):
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("finite-difference step must be positive")
    return h


def _generator_shift(space: SpinSpace, k: int, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    shift = np.zeros(t.shape + (space.dim,))
    shift[..., k] = t
    return shift


def horizontal_grad(f, x, space: SpinSpace, h=None) -> np.ndarray:
    """Central-difference horizontal gradient ``(X1 f, ..., Xn f)`` at ``x``.

    ``f`` maps an array of points (..., dim) to values (...). The result has
    a trailing axis of length ``space.n_generators``.
    """
    x = as_points(x, space)
    h = default_step(x, space) if h is None else _check_step(h)
    h = np.broadcast_to(h, x.shape[:-1])
    comps = []
    for k in range(space.n_generators):
        e = _generator_shift(space, k, h)
        fp = f(kernels.group_mul(x, e, space.kind))
        fm = f(kernels.group_mul(x, -e, space.kind))
        comps.append((fp - fm) / (2.0 * h))
    return np.stack(comps, axis=-1)


def sub_laplacian(f, x, space: SpinSpace, h=None) -> np.ndarray:
    """Second-order central differences of ``X1^2 + X2^2`` (``d^2/dx^2`` on the line)."""
    x = as_points(x, space)
    h = 10.0 * default_step(x, space) if h is None else _check_step(h)
    h = np.broadcast_to(h, x.shape[:-1])
    f0 = f(x)
    total = np.zeros(np.shape(f0))
    for k in range(space.n_generators):
        e = _generator_shift(space, k, h)
        fp = f(kernels.group_mul(x, e, space.kind))
        fm = f(kernels.group_mul(x, -e, space.kind))
        total = total + (fp - 2.0 * f0 + fm) / (h * h)
    return total


def _sin_minus_tcos(t):
    # sin t - t cos t, series near 0
    t2 = t * t
    series = t * t2 * (1.0 / 3.0 - t2 * (1.0 / 30.0 - t2 * (1.0 / 840.0 - t2 / 45360.0)))
    return np.where(t < 0.05, series, np.sin(t) - t * np.cos(t))


def grad_metric_d(x, space: SpinSpace) -> np.ndarray:
    """Analytic horizontal gradient of ``d(x)`` off the singular axis.

    On ``H1`` the derivatives of ``d = rho t / sin t`` follow by implicit
    differentiation of ``|x3| / rho^2 = (2t - sin 2t) / (8 sin^2 t)``. Points
    on the axis (rho = 0) get a zero vector.
    """
    x = as_points(x, space)
    if space is SpinSpace.LINE:
        return np.sign(x)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    rho = np.sqrt(x1 * x1 + x2 * x2)
    z = np.abs(x3)
    t, ok = python_kernels.geodesic_angle(rho, z)
    if not np.all(ok):
        raise CCSolverError(x[~ok])
    axis = rho < 1e-8
    rho_s = np.where(axis, 1.0, rho)
    t_s = np.where(axis, 1.0, t)
    st = np.sin(t_s)
    ct = np.cos(t_s)
    num = python_kernels._numer_theta(t_s)
    fprime = 0.5 - num * ct / (4.0 * st ** 3)
    dd_dt = rho_s * _sin_minus_tcos(t_s) / (st * st)
    dd_dz = dd_dt / (rho_s * rho_s * fprime)
    tos = np.where(t_s < 1e-8, 1.0, t_s / st)
    dd_drho = tos - dd_dt * 2.0 * z / (rho_s ** 3 * fprime)
    dd_dx3 = np.sign(x3) * dd_dz
    d1 = x1 / rho_s * dd_drho
    d2 = x2 / rho_s * dd_drho
    g1 = d1 - 0.5 * x2 * dd_dx3
    g2 = d2 + 0.5 * x1 * dd_dx3
    g = np.stack([g1, g2], axis=-1)
    return np.where(axis[..., None], 0.0, g)


def fit_laplacian_constant(points, space: SpinSpace, h=None) -> dict:
    """Fit ``K`` in ``Delta d <= K / d`` over sample points.

    Returns the one-sided constant ``max(d * Delta d)`` together with the
    two-sided ``max |d * Delta d|`` and the witnessing points.
    """
    points = as_points(points, space)

    def dist(p):
        return metric_d(p, space)

    d = dist(points)
    lap = sub_laplacian(dist, points, space, h=h)
    prod = d * lap
    i_up = int(np.argmax(prod))
    i_abs = int(np.argmax(np.abs(prod)))
    return {
        "K": float(prod[i_up]),
        "K_abs": float(np.abs(prod[i_abs])),
        "witness": points[i_up].tolist(),
        "witness_abs": points[i_abs].tolist(),
        "values": prod,
    }


def geodesic_points(x, fractions, space: SpinSpace) -> np.ndarray:
    """Points ``gamma(s d(x))`` on a minimising geodesic from ``e`` to ``x``.

    ``x`` is a single point and ``fractions`` lie in [0, 1]. On ``H1`` the
    horizontal projection is a circular arc turning by ``2t`` in total; the
    vertical coordinate is the signed area of the swept circular segment.
    """
    x = as_points(x, space).reshape(space.dim)
    s = np.asarray(fractions, dtype=float)
    if space is SpinSpace.LINE:
        return (s * x[0])[..., None]
    x1, x2, x3 = x
    rho = float(np.hypot(x1, x2))
    L = float(metric_d(x, space))
    if x3 == 0.0:
        return s[..., None] * x
    t, ok = python_kernels.geodesic_angle(np.array(rho), np.array(abs(x3)))
    t = float(t)
    sig = 1.0 if x3 > 0 else -1.0
    beta = float(np.arctan2(x2, x1)) if rho > 0 else 0.0
    if t < 1e-12:
        return s[..., None] * x
    R = L / (2.0 * t)
    a0 = beta - sig * t
    psi = s * L / R
    z = -1j * sig * R * (np.exp(1j * (a0 + sig * psi)) - np.exp(1j * a0))
    out = np.empty(s.shape + (3,))
    out[..., 0] = z.real
    out[..., 1] = z.imag
    out[..., 2] = sig * 0.5 * R * R * (psi - np.sin(psi))
    return out
