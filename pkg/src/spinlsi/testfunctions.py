"""Smooth, compactly supported test functions on configurations.

A test function is a scaled product of one-site factors. Factors map points
(..., dim) to values (...) and provide analytic horizontal gradients
(..., n_generators); products get their per-site gradients by the product
rule. The building block is the bump

    g_{a,w}(x) = exp(1 - 1 / (1 - ((d(x) - a) / w)^2))  on |d(x) - a| < w,

which equals 1 at d = a and vanishes with all derivatives at the edges.
"""
from __future__ import annotations

import dataclasses
from typing import Dict, Tuple

import numpy as np

from . import geometry
from .geometry import SpinSpace


def _coord_grad(x, k, space):
    # horizontal gradient of the coordinate function x_k
    shape = x.shape[:-1] + (space.n_generators,)
    g = np.zeros(shape)
    if space is SpinSpace.LINE:
        g[..., 0] = 1.0
    elif k < 2:
        g[..., k] = 1.0
    else:
        g[..., 0] = -0.5 * x[..., 1]
        g[..., 1] = 0.5 * x[..., 0]
    return g


class Factor:
    space: SpinSpace

    def __call__(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def support_edges(self):
        return ()


@dataclasses.dataclass(frozen=True)
class Const(Factor):
    space: SpinSpace
    c: float = 1.0

    def __call__(self, x):
        return np.full(np.shape(x)[:-1], float(self.c))

    def grad(self, x):
        return np.zeros(np.shape(x)[:-1] + (self.space.n_generators,))

    def __str__(self):
        return f"{self.c:g}"


@dataclasses.dataclass(frozen=True)
class Bump(Factor):
    space: SpinSpace
    a: float = 0.0
    w: float = 1.0

    def _profile(self, x):
        d = geometry.metric_d(x, self.space)
        u = (d - self.a) / self.w
        inside = np.abs(u) < 1.0
        us = np.where(inside, u, 0.0)
        one = 1.0 - us * us
        g = np.where(inside, np.exp(1.0 - 1.0 / one), 0.0)
        dg = np.where(inside, g * (-2.0 * us / (one * one)) / self.w, 0.0)
        return g, dg

    def __call__(self, x):
        return self._profile(geometry.as_points(x, self.space))[0]

    def grad(self, x):
        x = geometry.as_points(x, self.space)
        _, dg = self._profile(x)
        return dg[..., None] * geometry.grad_metric_d(x, self.space)

    def support_edges(self):
        return tuple(e for e in (self.a - self.w, self.a + self.w) if e > 0)

    def __str__(self):
        return f"bump({self.a:g},{self.w:g})"


@dataclasses.dataclass(frozen=True)
class CoordBump(Factor):
    """``x_k * g_{a,w}(x)``."""

    space: SpinSpace
    k: int = 0
    a: float = 0.0
    w: float = 1.0

    def _bump(self):
        return Bump(self.space, self.a, self.w)

    def __call__(self, x):
        x = geometry.as_points(x, self.space)
        return x[..., self.k] * self._bump()(x)

    def grad(self, x):
        x = geometry.as_points(x, self.space)
        b = self._bump()
        return _coord_grad(x, self.k, self.space) * b(x)[..., None] + x[..., self.k, None] * b.grad(x)

    def support_edges(self):
        return self._bump().support_edges()

    def __str__(self):
        return f"x{self.k + 1}*bump({self.a:g},{self.w:g})"


@dataclasses.dataclass(frozen=True)
class Shifted(Factor):
    """``1 + eps * inner``; strictly positive when ``|eps| * max|inner| < 1``."""

    inner: Factor
    eps: float = 0.5

    @property
    def space(self):
        return self.inner.space

    def __call__(self, x):
        return 1.0 + self.eps * self.inner(x)

    def grad(self, x):
        return self.eps * self.inner.grad(x)

    def support_edges(self):
        return self.inner.support_edges()

    def __str__(self):
        return f"(1+{self.eps:g}*{self.inner})"


@dataclasses.dataclass(frozen=True)
class SoftClip(Factor):
    """``s * tanh(x_k / s)``: 1-Lipschitz in the horizontal gradient for k < 2."""

    space: SpinSpace
    k: int = 0
    s: float = 1.0

    def __call__(self, x):
        x = geometry.as_points(x, self.space)
        return self.s * np.tanh(x[..., self.k] / self.s)

    def grad(self, x):
        x = geometry.as_points(x, self.space)
        sech2 = 1.0 / np.cosh(x[..., self.k] / self.s) ** 2
        return _coord_grad(x, self.k, self.space) * sech2[..., None]

    def __str__(self):
        return f"{self.s:g}*tanh(x{self.k + 1}/{self.s:g})"


Site = Tuple[int, int]


class TestFunction:
    """``scale * prod_site factor_site(x_site)``."""

    __test__ = False  # not a pytest class

    def __init__(self, factors: Dict[Site, Factor], scale: float = 1.0, name: str = None):
        if not factors:
            raise ValueError("a test function needs at least one factor")
        spaces = {f.space for f in factors.values()}
        if len(spaces) != 1:
            raise ValueError("all factors must live on the same spin space")
        self.space = spaces.pop()
        self.factors = dict(factors)
        self.scale = float(scale)
        self.name = name or self.describe()

    def describe(self):
        parts = [f"{f}@{s[0]},{s[1]}" for s, f in sorted(self.factors.items())]
        return ("" if self.scale == 1.0 else f"{self.scale:g}*") + "*".join(parts)

    @property
    def sites(self):
        return sorted(self.factors)

    def depends_on(self, site) -> bool:
        return site in self.factors and not isinstance(self.factors[site], Const)

    def breakpoints(self):
        edges = set()
        for f in self.factors.values():
            edges.update(round(e, 12) for e in f.support_edges())
        return tuple(sorted(edges))

    def scaled(self, c: float) -> "TestFunction":
        return TestFunction(self.factors, self.scale * c, name=f"{c:g}*({self.name})")

    # evaluation through a coordinate accessor get(site) -> (..., dim)
    def evaluate_sites(self, get):
        out = self.scale
        for s, f in self.factors.items():
            out = out * f(get(s))
        return np.asarray(out, dtype=float)

    def site_gradient_sites(self, get, site):
        if site not in self.factors:
            ref = get(self.sites[0])
            return np.zeros(np.shape(ref)[:-1] + (self.space.n_generators,))
        out = self.factors[site].grad(get(site)) * self.scale
        for s, f in self.factors.items():
            if s != site:
                out = out * f(get(s))[..., None]
        return out

    @staticmethod
    def _spins_get(spins):
        spins = np.asarray(spins, dtype=float)
        return lambda s: spins[..., s[0] + 1, s[1] + 1, :]

    def __call__(self, spins):
        """Evaluate on padded spin arrays (..., H+2, W+2, dim)."""
        return self.evaluate_sites(self._spins_get(spins))

    def site_gradient(self, spins, site):
        return self.site_gradient_sites(self._spins_get(spins), site)

    def grad_norm_sq(self, spins, sites=None):
        """Sum over ``sites`` (default: all factor sites) of ``|grad_site f|^2``."""
        get = self._spins_get(spins)
        sites = self.sites if sites is None else sites
        total = 0.0
        for s in sites:
            g = self.site_gradient_sites(get, s)
            total = total + np.sum(g * g, axis=-1)
        return np.asarray(total, dtype=float)

    def as_site_function(self, site=None):
        """Restriction to one site as a points -> values callable with ``grad``."""
        site = self.sites[0] if site is None else site
        if set(self.factors) != {site}:
            raise ValueError("as_site_function needs a function of a single site")
        return _SiteFunction(self, site)

    def __repr__(self):
        return f"TestFunction({self.name})"


class _SiteFunction:
    def __init__(self, tf, site):
        self.tf = tf
        self.site = site
        self.name = tf.name

    def __call__(self, x):
        return self.tf.evaluate_sites(lambda s: x)

    def grad(self, x):
        return self.tf.site_gradient_sites(lambda s: x, self.site)


def single_site_family(space: SpinSpace, site: Site = (0, 0)):
    """Functions of one spin: bumps of several widths and coordinate-weighted bumps."""
    B = lambda a, w: Bump(space, a, w)  # noqa: E731
    factors = [
        B(0.0, 1.0), B(0.0, 2.0), B(0.0, 3.0), B(0.5, 0.5), B(1.0, 0.7), B(0.3, 1.2),
        CoordBump(space, 0, 0.0, 1.5), CoordBump(space, 0, 0.0, 3.0), CoordBump(space, 0, 0.5, 1.0),
        Shifted(B(0.0, 1.0), 0.5), Shifted(B(0.5, 1.0), -0.5), Shifted(CoordBump(space, 0, 0.0, 2.0), 0.3),
        B(0.0, 0.5), B(1.5, 1.0), B(0.8, 0.4), CoordBump(space, 0, 0.0, 1.0), Shifted(B(0.0, 3.0), 0.5),
        CoordBump(space, 0, 1.0, 1.0),
    ]
    if space is SpinSpace.HEISENBERG1:
        factors += [CoordBump(space, 1, 0.0, 2.0), CoordBump(space, 2, 0.0, 2.0)]
    else:
        factors += [Shifted(CoordBump(space, 0, 0.0, 3.0), 0.2), CoordBump(space, 0, 0.0, 2.0)]
    return [TestFunction({site: f}) for f in factors]


def pair_family(space: SpinSpace, i: Site, j: Site):
    """Functions of ``x_i`` and ``x_j``: site-only members for each site plus products.

    Site-only members pin the secondary coefficients in the two-sided fits.
    """
    B = lambda a, w: Bump(space, a, w)  # noqa: E731
    C = lambda a, w: CoordBump(space, 0, a, w)  # noqa: E731
    fam = []
    for s in (i, j):
        fam += [TestFunction({s: B(0.0, 1.5)}), TestFunction({s: C(0.0, 2.0)}),
                TestFunction({s: Shifted(B(0.5, 1.0), 0.5)})]
    products = [
        (B(0.0, 1.5), B(0.0, 1.5)), (C(0.0, 2.0), C(0.0, 2.0)), (B(0.0, 1.0), C(0.0, 2.0)),
        (C(0.0, 2.0), B(0.0, 1.0)), (B(0.5, 0.7), B(0.0, 2.0)), (B(0.0, 2.0), B(0.5, 0.7)),
        (Shifted(B(0.0, 1.0), 0.5), Shifted(C(0.0, 2.0), 0.4)), (C(0.0, 1.2), C(0.0, 1.2)),
        (Shifted(C(0.0, 2.0), 0.4), B(0.0, 1.5)), (B(0.3, 1.0), C(0.3, 1.5)),
        (C(0.0, 3.0), C(0.0, 3.0)), (B(0.0, 3.0), C(0.0, 1.0)),
        (C(0.0, 1.0), B(0.0, 3.0)), (Shifted(B(0.0, 2.0), -0.5), Shifted(B(0.0, 2.0), 0.5)),
    ]
    fam += [TestFunction({i: a, j: b}) for a, b in products]
    return fam


def block_family(space: SpinSpace, block0, block1):
    """Functions on a window split into two parity blocks.

    Includes members depending only on ``block1`` spins, products across the
    blocks, and single-site members.
    """
    B = lambda a, w: Bump(space, a, w)  # noqa: E731
    C = lambda a, w: CoordBump(space, 0, a, w)  # noqa: E731
    sites = list(block0) + list(block1)
    fam = []
    fam.append(TestFunction({s: B(0.0, 2.0) for s in block1}))
    fam.append(TestFunction({block1[0]: C(0.0, 2.0)}))
    fam.append(TestFunction({s: C(0.0, 2.0) for s in block1}))
    fam.append(TestFunction({s: B(0.0, 2.0) for s in block0}))
    fam.append(TestFunction({block0[0]: C(0.0, 2.0)}))
    fam.append(TestFunction({s: C(0.0, 2.0) for s in block0}))
    fam.append(TestFunction({s: B(0.0, 2.0) for s in sites}))
    fam.append(TestFunction({s: C(0.0, 2.5) for s in sites}))
    fam.append(TestFunction({block0[0]: C(0.0, 2.0), block1[0]: C(0.0, 2.0)}))
    fam.append(TestFunction({block0[0]: B(0.0, 1.2), block1[-1]: C(0.0, 2.0)}))
    fam.append(TestFunction({s: Shifted(B(0.0, 1.5), 0.5) for s in sites}))
    fam.append(TestFunction({block0[0]: Shifted(C(0.0, 2.0), 0.4), block1[0]: Shifted(C(0.0, 2.0), 0.4)}))
    return fam
