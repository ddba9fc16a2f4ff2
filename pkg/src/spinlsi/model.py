"""Lattice windows, configurations and the Hamiltonian of the example model.

The finite-volume Hamiltonian on a window with frozen boundary spins is

    H(x) = sum_i d(x_i)^p + delta * J * sum over edges (d(x_i) + d(x_j))^r,

where every edge touching the window is counted once: interior-interior
edges once, interior-boundary edges once per boundary neighbour.
Configurations are padded arrays of shape (H+2, W+2, dim) whose outer ring
holds the boundary spins; corners are never read.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np

from . import geometry
from .geometry import SpinSpace

# neighbour offsets in the fixed order used by every energy sum: up, down, left, right
NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclasses.dataclass(frozen=True)
class LatticeSpec:
    """A ``height x width`` window of Z^2 with a fixed boundary.

    ``boundary`` is either None (every boundary spin at the identity), a
    single spin applied to every boundary site, or a full padded array.
    """

    width: int
    height: int
    boundary: Optional[tuple] = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("lattice width and height must be positive")

    @property
    def n_sites(self) -> int:
        return self.width * self.height

    def sites(self):
        return [(a, b) for a in range(self.height) for b in range(self.width)]

    def parity_sites(self, parity: int):
        return [(a, b) for (a, b) in self.sites() if (a + b) % 2 == parity]

    def neighbours(self, site):
        """Neighbour coordinates of an interior site; boundary ones fall outside the window."""
        a, b = site
        return [(a + da, b + db) for da, db in NEIGHBOURS]

    def is_interior(self, site) -> bool:
        a, b = site
        return 0 <= a < self.height and 0 <= b < self.width

    def boundary_array(self, space: SpinSpace) -> np.ndarray:
        """Padded array with the boundary ring filled and zeros inside."""
        shape = (self.height + 2, self.width + 2, space.dim)
        if self.boundary is None:
            return np.zeros(shape)
        arr = np.asarray(self.boundary, dtype=float)
        if arr.shape == (space.dim,) or (space.dim == 1 and arr.ndim == 0):
            out = np.zeros(shape)
            ring = np.ones(shape[:2], dtype=bool)
            ring[1:-1, 1:-1] = False
            out[ring] = arr.reshape(space.dim)
            return out
        if arr.shape != shape:
            raise ValueError(f"boundary array must have shape {shape}, got {arr.shape}")
        out = arr.copy()
        out[1:-1, 1:-1] = 0.0
        return out


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Phase exponent ``p``, interaction exponent ``r`` and coupling ``delta``.

    ``J`` is the framework coupling bound; the example model uses ``J = 1``
    so the edge weight is ``delta``. ``strict`` enforces the example-model
    range ``2 < r <= (p + 2) / 2``; switch it off for negative controls.
    """

    spin_space: SpinSpace = SpinSpace.LINE
    p: int = 4
    r: int = 3
    delta: float = 0.0
    J: float = 1.0
    lattice: LatticeSpec = LatticeSpec(4, 4)
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "spin_space", SpinSpace.parse(self.spin_space))
        if int(self.p) != self.p or int(self.r) != self.r:
            raise ValueError("p and r must be integers")
        if self.p < 1 or self.r < 1:
            raise ValueError("p and r must be positive")
        if self.delta < 0 or self.J < 0:
            raise ValueError("delta and J must be nonnegative")
        if self.strict:
            problems = self.example_violations()
            if problems:
                raise ValueError("; ".join(problems))

    def example_violations(self):
        out = []
        if self.p < 2:
            out.append(f"p={self.p} must be >= 2")
        if not (self.r > 2 and 2 * self.r <= self.p + 2):
            out.append(f"r={self.r} must satisfy 2 < r <= (p+2)/2 = {(self.p + 2) / 2}")
        return out

    @property
    def coupling(self) -> float:
        return self.delta * self.J

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


class SpinConfig:
    """Spins on a window plus the frozen boundary, stored as one padded array."""

    def __init__(self, lattice: LatticeSpec, space: SpinSpace, spins=None):
        self.lattice = lattice
        self.space = space
        base = lattice.boundary_array(space)
        if spins is not None:
            spins = np.asarray(spins, dtype=float)
            if spins.shape == base.shape:
                base[1:-1, 1:-1] = spins[1:-1, 1:-1]
            elif spins.shape == (lattice.height, lattice.width, space.dim):
                base[1:-1, 1:-1] = spins
            else:
                raise ValueError(f"bad spin array shape {spins.shape}")
        if not np.all(np.isfinite(base)):
            raise ValueError("spin coordinates must be finite")
        self.array = base

    @classmethod
    def identity(cls, lattice, space):
        return cls(lattice, space)

    @property
    def interior(self) -> np.ndarray:
        return self.array[1:-1, 1:-1]

    def spin(self, site) -> np.ndarray:
        a, b = site
        return self.array[a + 1, b + 1]

    def with_spin(self, site, value) -> "SpinConfig":
        out = self.copy()
        a, b = site
        out.array[a + 1, b + 1] = geometry.as_points(value, self.space)
        return out

    def copy(self) -> "SpinConfig":
        new = SpinConfig.__new__(SpinConfig)
        new.lattice = self.lattice
        new.space = self.space
        new.array = self.array.copy()
        return new

    def boundary_ring(self) -> np.ndarray:
        ring = np.ones(self.array.shape[:2], dtype=bool)
        ring[1:-1, 1:-1] = False
        return self.array[ring]


def _ipow(x, n):
    out = np.ones_like(np.asarray(x, dtype=float))
    for _ in range(n):
        out = out * x
    return out


def phase(x, params: ModelParams):
    """``d(x)^p``."""
    return _ipow(geometry.metric_d(x, params.spin_space), params.p)


def interaction(x, w, params: ModelParams):
    """``(d(x) + d(w))^r`` (without the coupling)."""
    space = params.spin_space
    return _ipow(geometry.metric_d(x, space) + geometry.metric_d(w, space), params.r)


def interaction_expanded(dx, dw, r: int):
    """Binomial expansion ``sum_k C(r, k) dx^(r-k) dw^k`` of ``(dx + dw)^r``."""
    dx = np.asarray(dx, dtype=float)
    dw = np.asarray(dw, dtype=float)
    return sum(math.comb(r, k) * dx ** (r - k) * dw ** k for k in range(r + 1))


def interaction_reduced(dx, dw, r: int):
    """Interaction minus its ``x``-independent part ``dw^r``.

    The dropped term does not change any single-site conditional law; this is the
    form in which the geometric lower bound ``k0 V <= d U`` holds.
    """
    return interaction_expanded(dx, dw, r) - np.asarray(dw, dtype=float) ** r


def site_energy_from_distances(d_site, d_neigh, params: ModelParams):
    """``H^i`` from the site distance and the four neighbour distances (last axis)."""
    d_site = np.asarray(d_site, dtype=float)
    inter = 0.0
    for k in range(d_neigh.shape[-1]):
        inter = inter + _ipow(d_site + d_neigh[..., k], params.r)
    return _ipow(d_site, params.p) + params.coupling * inter


def distance_field(spins, space: SpinSpace) -> np.ndarray:
    """Distances of every entry of a padded spin array (any leading batch axes)."""
    return geometry.metric_d(spins, space)


def _check_site(lattice: LatticeSpec, site):
    if not lattice.is_interior(site):
        raise IndexError(f"site {site} is outside the {lattice.height}x{lattice.width} window")


def site_hamiltonian(site, cfg: SpinConfig, params: ModelParams) -> float:
    """Phase at ``site`` plus its four interactions, neighbours read from ``cfg``."""
    _check_site(cfg.lattice, site)
    a, b = site
    dist = distance_field(cfg.array, params.spin_space)
    neigh = np.array([dist[a + 1 + da, b + 1 + db] for da, db in NEIGHBOURS])
    return float(site_energy_from_distances(dist[a + 1, b + 1], neigh, params))


def batch_site_hamiltonian(spins, site, params: ModelParams, dist=None):
    """``H^i`` for a batch of padded arrays (..., H+2, W+2, dim)."""
    a, b = site
    if dist is None:
        dist = distance_field(spins, params.spin_space)
    neigh = np.stack([dist[..., a + 1 + da, b + 1 + db] for da, db in NEIGHBOURS], axis=-1)
    return site_energy_from_distances(dist[..., a + 1, b + 1], neigh, params)


def batch_total_hamiltonian(spins, params: ModelParams, dist=None):
    """Total window Hamiltonian for a batch of padded arrays."""
    if dist is None:
        dist = distance_field(spins, params.spin_space)
    inner = dist[..., 1:-1, 1:-1]
    total = np.sum(_ipow(inner, params.p), axis=(-1, -2))
    # horizontal edges: pairs (b, b+1) over the padded columns 0..W+1, excluding boundary-boundary
    hor = _ipow(dist[..., 1:-1, :-1] + dist[..., 1:-1, 1:], params.r)
    ver = _ipow(dist[..., :-1, 1:-1] + dist[..., 1:, 1:-1], params.r)
    inter = np.sum(hor, axis=(-1, -2)) + np.sum(ver, axis=(-1, -2))
    return total + params.coupling * inter


def total_hamiltonian(cfg: SpinConfig, params: ModelParams) -> float:
    return float(batch_total_hamiltonian(cfg.array, params))
