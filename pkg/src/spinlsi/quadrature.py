"""Deterministic tensor-grid quadrature for one-site and tiny-lattice measures.

Every axis is split at the origin into two Gauss-Legendre panels, since the
densities have kinks there (``|x|`` on the line, the singular axis of the
CC distance on ``H1``); on each panel the integrands are smooth and the
rule converges spectrally. Normalisation is done in log space, so ``Z`` itself
never under- or overflows.
"""
from __future__ import annotations

import dataclasses
import itertools
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from . import geometry, model
from .geometry import SpinSpace

RULES = ("gauss-legendre", "trapezoid")


class QuadratureError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class GridSpec:
    """Truncation ``half_width`` (None: adaptive), nodes per axis and rule.

    The adaptive half width is the ``L`` at which the phase reaches
    ``tail_level``, so the integrand is below ``exp(-tail_level)`` outside.
    ``breakpoints`` are extra panel edges at ``+-b`` on every axis; put them
    at the support edges of compactly supported test functions, where the
    integrand is smooth but not analytic.
    """

    half_width: Optional[float] = None
    points_per_axis: int = 64
    rule: str = "gauss-legendre"
    tail_level: float = 40.0
    tail_tol: float = 1e-10
    breakpoints: tuple = ()

    def __post_init__(self):
        if self.points_per_axis < 16:
            raise ValueError("points_per_axis must be >= 16")
        if self.points_per_axis % 2:
            raise ValueError("points_per_axis must be even (one panel per half axis)")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        if self.half_width is not None and not self.half_width > 0:
            raise ValueError("half_width must be positive")

    def resolve_half_width(self, p: int) -> float:
        if self.half_width is not None:
            return float(self.half_width)
        return float(self.tail_level ** (1.0 / p))

    def nodes(self, L: float):
        """Nodes and weights on [-L, L]."""
        half = self.points_per_axis // 2
        edges = np.unique([0.0, L] + [float(b) for b in self.breakpoints if 0.0 < b < L])
        counts = _allocate(np.diff(edges) / L, half)
        right, wr = [], []
        for lo, hi, k in zip(edges[:-1], edges[1:], counts):
            x, w = self._panel(k)
            right.append(lo + (hi - lo) * x)
            wr.append((hi - lo) * w)
        right = np.concatenate(right)
        wr = np.concatenate(wr)
        return np.concatenate([-right[::-1], right]), np.concatenate([wr[::-1], wr])

    def _panel(self, k):
        # rule on [0, 1]
        if self.rule == "gauss-legendre":
            t, w = np.polynomial.legendre.leggauss(k)
            return 0.5 * (t + 1.0), 0.5 * w
        return (np.arange(k) + 0.5) / k, np.full(k, 1.0 / k)

    def refined(self) -> "GridSpec":
        return dataclasses.replace(self, points_per_axis=2 * self.points_per_axis)

    def widened(self, p: int) -> "GridSpec":
        return dataclasses.replace(self, half_width=2.0 * self.resolve_half_width(p))


def _allocate(fractions, total, minimum=4):
    """Split ``total`` nodes over panels in proportion to their length."""
    n = len(fractions)
    if total < minimum * n:
        raise ValueError("too few nodes per axis for the requested breakpoints")
    raw = minimum + fractions * (total - minimum * n)
    counts = np.floor(raw).astype(int)
    for k in np.argsort(-(raw - counts))[: total - counts.sum()]:
        counts[k] += 1
    return counts


def _box_half_widths(space: SpinSpace, L: float):
    # the CC ball of radius L sits inside |x1|, |x2| <= L, |x3| <= L^2 / (2 pi) (half-disc bound)
    if space is SpinSpace.LINE:
        return (L,)
    return (L, L, L * L / (2.0 * np.pi))


def tensor_nodes(space: SpinSpace, grid: GridSpec, p: int):
    """Flattened nodes (N, dim) and weights (N,) of the one-site box."""
    L = grid.resolve_half_width(p)
    axes = [grid.nodes(h) for h in _box_half_widths(space, L)]
    pts = np.stack(np.meshgrid(*[a[0] for a in axes], indexing="ij"), axis=-1).reshape(-1, space.dim)
    w = axes[0][1]
    for a in axes[1:]:
        w = np.multiply.outer(w, a[1])
    return pts, w.reshape(-1)


@dataclasses.dataclass(frozen=True)
class SiteMeasureSpec:
    """One-site measure ``exp(-H^i)``; ``neighbours`` None means the bare phase."""

    params: model.ModelParams
    neighbours: Optional[tuple] = None

    def neighbour_distances(self) -> np.ndarray:
        if self.neighbours is None:
            return np.zeros(4)
        pts = geometry.as_points(np.asarray(self.neighbours, dtype=float), self.params.spin_space)
        pts = pts.reshape(-1, self.params.spin_space.dim)
        if len(pts) != 4:
            raise ValueError("a site has exactly four neighbours")
        return geometry.metric_d(pts, self.params.spin_space)

    def energy(self, points) -> np.ndarray:
        space = self.params.spin_space
        d = geometry.metric_d(points, space)
        if self.neighbours is None:
            return d ** self.params.p
        return model.site_energy_from_distances(d, self.neighbour_distances(), self.params)


def _norm_log_weights(logw):
    lz = logsumexp(logw)
    if not np.isfinite(lz):
        raise QuadratureError("normalisation constant is zero or not finite on the grid")
    return np.exp(logw - lz), lz


class SiteQuadrature:
    """Quadrature rule for one fixed one-site measure; reused across functions."""

    def __init__(self, spec: SiteMeasureSpec, grid: GridSpec = GridSpec(), check_tail: bool = True):
        self.spec = spec
        self.grid = grid
        space = spec.params.spin_space
        self.points, self.weights = tensor_nodes(space, grid, spec.params.p)
        self.energy = spec.energy(self.points)
        self.prob, self.log_Z = _norm_log_weights(np.log(self.weights) - self.energy)
        self.tail_mass = self._tail_mass() if check_tail else None
        if self.tail_mass is not None and self.tail_mass > grid.tail_tol:
            raise QuadratureError(f"tail mass {self.tail_mass:.3e} outside the box exceeds {grid.tail_tol:g}")

    def _tail_mass(self) -> float:
        space = self.spec.params.spin_space
        p = self.spec.params.p
        wide = self.grid.widened(p)
        pts, w = tensor_nodes(space, wide, p)
        inner = np.array(_box_half_widths(space, self.grid.resolve_half_width(p)))
        outside = np.any(np.abs(pts) > inner, axis=-1)
        if not outside.any():
            return 0.0
        logw = np.log(w[outside]) - self.spec.energy(pts[outside])
        return float(np.exp(logsumexp(logw) - self.log_Z))

    @property
    def Z(self) -> float:
        return float(np.exp(self.log_Z))

    def expect(self, values) -> float:
        return float(np.dot(self.prob, np.asarray(values, dtype=float)))


def _values_and_grad(f, points, space):
    vals = np.asarray(f(points), dtype=float)
    if hasattr(f, "grad"):
        grad = np.asarray(f.grad(points), dtype=float)
    else:
        grad = geometry.horizontal_grad(f, points, space)
    return vals, grad


def site_functionals(f, spec: SiteMeasureSpec, grid: GridSpec = GridSpec(), quad: SiteQuadrature = None) -> dict:
    """Mean, variance, entropy of ``f^2``, Dirichlet form and their ratio.

    ``f`` maps points (N, dim) to values; if it has a ``grad`` method that is
    used for the horizontal gradient, otherwise central differences.
    """
    q = quad if quad is not None else SiteQuadrature(spec, grid)
    space = spec.params.spin_space
    v, g = _values_and_grad(f, q.points, space)
    mean = q.expect(v)
    var = q.expect((v - mean) ** 2)
    f2 = v * v
    m2 = q.expect(f2)
    ent = q.expect(xlogy(f2, f2)) - float(xlogy(m2, m2))
    dir_ = q.expect(np.sum(g * g, axis=-1))
    if dir_ < 1e-14:
        ratio = np.inf if ent > 1e-14 else np.nan
    else:
        ratio = ent / dir_
    return {"mean": mean, "variance": var, "second_moment": m2, "entropy_f2": ent,
            "dirichlet": dir_, "lsi_ratio": ratio, "log_Z": q.log_Z}


def grid_convergence(functions: Sequence[Callable], spec: SiteMeasureSpec, grid: GridSpec = GridSpec()) -> float:
    """Largest relative change of any functional when ``m`` is doubled."""
    a = SiteQuadrature(spec, grid)
    b = SiteQuadrature(spec, grid.refined(), check_tail=False)
    worst = 0.0
    for f in functions:
        ra = site_functionals(f, spec, quad=a)
        rb = site_functionals(f, spec, quad=b)
        for key in ("mean", "variance", "entropy_f2", "dirichlet"):
            scale = max(abs(rb[key]), 1e-10)
            worst = max(worst, abs(ra[key] - rb[key]) / scale)
    return worst


def neighbour_spins(cfg: model.SpinConfig, site) -> np.ndarray:
    a, b = site
    return np.array([cfg.array[a + 1 + da, b + 1 + db] for da, db in model.NEIGHBOURS])


def conditional_expectation(f, site, cfg: model.SpinConfig, params: model.ModelParams,
                            grid: GridSpec = GridSpec(), chunk: int = 8192) -> float:
    """``E^i f`` at the frozen neighbours of ``cfg``.

    ``f`` maps a batch of padded spin arrays (N, H+2, W+2, dim) to (N,).
    """
    if not cfg.lattice.is_interior(site):
        raise IndexError(f"site {site} is outside the window")
    spec = SiteMeasureSpec(params, tuple(map(tuple, neighbour_spins(cfg, site))))
    q = SiteQuadrature(spec, grid)
    a, b = site
    total = 0.0
    for start in range(0, len(q.points), chunk):
        nodes = q.points[start:start + chunk]
        batch = np.repeat(cfg.array[None], len(nodes), axis=0)
        batch[:, a + 1, b + 1, :] = nodes
        total += float(np.dot(q.prob[start:start + chunk], np.asarray(f(batch), dtype=float)))
    return total


class TinyLattice:
    """Exact grid version of the finite-volume measure on at most four line spins.

    Site ``k`` (row-major order) is array axis ``k``. Functions of the
    configuration are given as callables ``f(get)`` where ``get(site)``
    returns broadcastable coordinate arrays with a trailing axis of length 1.
    """

    MAX_SITES = 4

    def __init__(self, params: model.ModelParams, grid: GridSpec = GridSpec(points_per_axis=32),
                 lattice: model.LatticeSpec = None):
        self.params = params
        self.lattice = lattice if lattice is not None else params.lattice
        if params.spin_space is not SpinSpace.LINE or self.lattice.n_sites > self.MAX_SITES:
            raise QuadratureError("tiny-lattice quadrature supports at most 4 line spins; use MCMC instead")
        self.grid = grid
        self.sites = self.lattice.sites()
        self.n = len(self.sites)
        self.index = {s: k for k, s in enumerate(self.sites)}
        self.x, self.w = grid.nodes(grid.resolve_half_width(params.p))
        self.m = len(self.x)
        self.shape = (self.m,) * self.n
        bnd = model.distance_field(self.lattice.boundary_array(SpinSpace.LINE), SpinSpace.LINE)
        self._bnd = bnd
        log_w = sum(np.log(self.w).reshape(self._axis_shape(k)) for k in range(self.n))
        self.log_density = log_w - self.hamiltonian(self.grid_get())
        self.prob, self.log_Z = _norm_log_weights(self.log_density)

    def _axis_shape(self, k, lead=()):
        shape = [1] * self.n
        shape[k] = self.m
        return tuple(lead) + tuple(shape)

    def grid_get(self):
        """Coordinate accessor for the full grid (each site on its own axis)."""
        def get(site):
            return self.x.reshape(self._axis_shape(self.index[site]))[..., None]
        return get

    def hamiltonian(self, get) -> np.ndarray:
        """Total window energy for coordinates supplied by ``get``."""
        p, r, c = self.params.p, self.params.r, self.params.coupling
        d = {s: np.abs(get(s)[..., 0]) for s in self.sites}
        total = sum(d[s] ** p for s in self.sites)
        inter = 0.0
        for s in self.sites:
            a, b = s
            for da, db in model.NEIGHBOURS:
                t = (a + da, b + db)
                if t in self.index:
                    if self.index[t] > self.index[s]:
                        inter = inter + (d[s] + d[t]) ** r
                else:
                    inter = inter + (d[s] + self._bnd[t[0] + 1, t[1] + 1]) ** r
        return total + c * inter

    def values(self, f) -> np.ndarray:
        return np.broadcast_to(np.asarray(f(self.grid_get()), dtype=float), self.shape)

    def mean(self, F) -> float:
        return float(np.sum(self.prob * np.broadcast_to(F, self.shape)))

    def cond(self, F, block) -> np.ndarray:
        """``E^block F`` on the grid (constant along the block axes)."""
        axes = tuple(sorted(self.index[s] for s in block))
        if not axes:
            return np.array(np.broadcast_to(F, self.shape))
        lc = self.log_density - logsumexp(self.log_density, axis=axes, keepdims=True)
        out = np.sum(np.exp(lc) * np.broadcast_to(F, self.shape), axis=axes, keepdims=True)
        return np.array(np.broadcast_to(out, self.shape))

    def entropy(self, F) -> float:
        """``Ent(F) = nu(F log F) - nu(F) log nu(F)`` for ``F >= 0``."""
        m = self.mean(F)
        return self.mean(xlogy(F, F)) - float(xlogy(m, m))

    def marginal(self, keep):
        """Grid coordinates (N, len(keep)) and weights (N,) of the marginal on ``keep``."""
        axes = [self.index[s] for s in keep]
        other = tuple(k for k in range(self.n) if k not in axes)
        marg = np.sum(self.prob, axis=other) if other else self.prob
        # sum keeps remaining axes in increasing order
        order = sorted(axes)
        coords = np.stack(np.meshgrid(*([self.x] * len(order)), indexing="ij"), axis=-1).reshape(-1, len(order))
        perm = [order.index(self.index[s]) for s in keep]
        return coords[:, perm], marg.reshape(-1)

    def cond_expect_at(self, f, block, rest):
        """``E^block f`` evaluated at arbitrary coordinates of the other sites.

        ``rest`` maps each non-block site to an array (N,). Returns (N,).
        """
        block = list(block)
        kb = len(block)
        N = len(next(iter(rest.values()))) if rest else 1
        pos = {s: j for j, s in enumerate(block)}

        def get(site):
            if site in pos:
                shape = [1] * (kb + 1)
                shape[1 + pos[site]] = self.m
                return self.x.reshape(shape)[..., None]
            return np.asarray(rest[site], dtype=float).reshape((N,) + (1,) * kb)[..., None]

        logw = -self.hamiltonian(get)
        for j in range(kb):
            shape = [1] * (kb + 1)
            shape[1 + j] = self.m
            logw = logw + np.log(self.w).reshape(shape)
        logw = np.broadcast_to(logw, (N,) + (self.m,) * kb)
        axes = tuple(range(1, kb + 1))
        prob = np.exp(logw - logsumexp(logw, axis=axes, keepdims=True))
        vals = np.broadcast_to(np.asarray(f(get), dtype=float), prob.shape)
        return np.sum(prob * vals, axis=axes)


def _site_grad_fd(f, tl: TinyLattice, site, h):
    base = tl.grid_get()

    def shifted(sign):
        def get(s):
            v = base(s)
            return v + sign * h if s == site else v
        return np.broadcast_to(np.asarray(f(get), dtype=float), tl.shape)

    return (shifted(1.0) - shifted(-1.0)) / (2.0 * h)


def tiny_lattice_functionals(f, lattice: model.LatticeSpec, params: model.ModelParams,
                             grid: GridSpec = GridSpec(points_per_axis=32), h: float = 1e-5) -> dict:
    """Gibbs mean, entropy of ``f^2`` and Dirichlet form on a tiny line lattice."""
    tl = TinyLattice(params, grid, lattice)
    F = tl.values(f)
    dirichlet = 0.0
    for s in tl.sites:
        if hasattr(f, "site_gradient_sites"):
            g = np.broadcast_to(f.site_gradient_sites(tl.grid_get(), s)[..., 0], tl.shape)
        else:
            g = _site_grad_fd(f, tl, s, h)
        dirichlet += tl.mean(g * g)
    return {"gibbs_mean": tl.mean(F), "entropy": tl.entropy(F * F), "dirichlet": dirichlet,
            "log_Z": tl.log_Z}


def all_subsets(items):
    for k in range(len(items) + 1):
        yield from itertools.combinations(items, k)
