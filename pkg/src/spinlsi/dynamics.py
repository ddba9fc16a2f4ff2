"""Metropolis-within-Gibbs checkerboard dynamics and the sweep operators ``Q^n``.

One application of a block conditional expectation ``E^{Gamma_k}`` is
approximated by ``inner_steps`` Metropolis moves at every site of the
class, all sites of the class moving in parallel with the other class and
the boundary frozen.

Random numbers are counter based: the draws for one block update are read
from a Philox stream keyed by ``(seed, stream tag, sweep index, parity)``
with the replica index as the leading array axis. A run is therefore a pure
function of its ChainSpec and start configuration, and replica ``r`` sees
the same numbers whatever the number of replicas.

The operators compose as ``Q^n = T_n ... T_1`` with ``T_k = E^{Gamma_0}``
for odd ``k`` and ``E^{Gamma_1}`` for even ``k``. Read as a chain started
at ``x``, the leftmost operator acts first, so ``Q^n f(x)`` is the mean of
``f`` after block updates of parities ``a_n, ..., a_1``; the last update is
always ``Gamma_0``.
"""
from __future__ import annotations

import dataclasses
import json
import math
import warnings
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import geometry, model
from ._backend import kernels
from .geometry import SpinSpace
from .model import ModelParams, SpinConfig

ACCEPTANCE_BAND = (0.1, 0.9)


@dataclasses.dataclass(frozen=True)
class ChainSpec:
    seed: int = 0
    proposal_scale: float = 0.5
    inner_steps: int = 32
    burn_in: int = 200
    n_samples: int = 1000
    thinning: int = 1
    n_chains: int = 16

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2 ** 64) or int(self.seed) != self.seed:
            raise ValueError("seed must be an integer in [0, 2^64)")
        if not self.proposal_scale > 0:
            raise ValueError("proposal_scale must be positive")
        for name in ("inner_steps", "thinning", "n_chains"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.burn_in < 0 or self.n_samples < 0:
            raise ValueError("burn_in and n_samples must be nonnegative")

    def replace(self, **changes) -> "ChainSpec":
        return dataclasses.replace(self, **changes)


def operator_parity(k: int) -> int:
    """Parity class integrated by the ``k``-th factor ``T_k`` (k >= 1)."""
    return 0 if k % 2 == 1 else 1


@dataclasses.dataclass(frozen=True)
class SweepSchedule:
    """The block updates realising ``Q^n``."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be >= 0")

    def operators(self) -> List[int]:
        """Parities of ``T_1, ..., T_n``: 0, 1, 0, 1, ..."""
        return [operator_parity(k) for k in range(1, self.n + 1)]

    def chain_order(self) -> List[int]:
        """Parities in the order a chain applies them: ``a_n, ..., a_1``."""
        return self.operators()[::-1]


def _draws(chain: ChainSpec, stream, sweep, parity, shape, dim):
    root = [int(chain.seed)] + [int(s) for s in stream] + [int(sweep), int(parity)]
    g_n = np.random.Generator(np.random.Philox(np.random.SeedSequence(root + [0])))
    g_u = np.random.Generator(np.random.Philox(np.random.SeedSequence(root + [1])))
    steps = g_n.standard_normal(shape + (dim,)) * chain.proposal_scale
    u = g_u.random(shape)
    return steps, u


class ChainState:
    """A batch of ``R`` configurations evolving under the block dynamics."""

    def __init__(self, params: ModelParams, chain: ChainSpec, spins, stream: Sequence[int] = (0,)):
        spins = np.array(spins, dtype=np.float64, order="C", copy=True)
        if spins.ndim == 3:
            spins = spins[None]
        self.params = params
        self.chain = chain
        self.space = params.spin_space
        self.spins = spins
        self.dist = np.ascontiguousarray(geometry.metric_d(spins, self.space))
        self.stream = tuple(int(s) for s in stream)
        self.sweep = 0
        self.accepted = {0: 0, 1: 0}
        self.proposed = {0: 0, 1: 0}

    @classmethod
    def replicate(cls, params, chain, cfg: SpinConfig, n: int, stream=(0,)):
        return cls(params, chain, np.repeat(cfg.array[None], n, axis=0), stream)

    @property
    def n_replicas(self) -> int:
        return self.spins.shape[0]

    @property
    def shape(self):
        R, Hp, Wp, _ = self.spins.shape
        return R, Hp - 2, Wp - 2

    def n_sites(self, parity) -> int:
        _, H, W = self.shape
        return sum(1 for a in range(H) for b in range(W) if (a + b) % 2 == parity)

    def resample(self, parity: int) -> int:
        if parity not in (0, 1):
            raise ValueError("parity must be 0 or 1")
        R, H, W = self.shape
        m = self.chain.inner_steps
        steps, u = _draws(self.chain, self.stream, self.sweep, parity, (R, H, W, m), self.space.dim)
        p = self.params
        acc = kernels.sweep_parity(self.spins, self.dist, parity, self.space.kind,
                                   int(p.p), int(p.r), float(p.coupling), steps, u)
        self.sweep += 1
        self.accepted[parity] += int(acc)
        self.proposed[parity] += R * self.n_sites(parity) * m
        return int(acc)

    def run(self, parities: Sequence[int]):
        for k in parities:
            self.resample(k)
        return self

    def acceptance_rate(self) -> float:
        tot = self.proposed[0] + self.proposed[1]
        return (self.accepted[0] + self.accepted[1]) / tot if tot else float("nan")


def resample_parity(state: ChainState, parity: int) -> ChainState:
    """Apply one approximate ``E^{Gamma_parity}`` to every replica in place."""
    state.resample(parity)
    return state


def metropolis_site_step(site, cfg: SpinConfig, params: ModelParams, rng=None, xi=None, u=None,
                         proposal_scale: float = 0.5) -> SpinConfig:
    """One Metropolis move at ``site``; returns a new configuration.

    Either pass a numpy Generator ``rng`` or the increment ``xi`` and uniform
    ``u`` explicitly.
    """
    if not cfg.lattice.is_interior(site):
        raise IndexError(f"site {site} is outside the window")
    space = params.spin_space
    if xi is None:
        xi = rng.standard_normal(space.dim) * proposal_scale
    if u is None:
        u = rng.random()
    x = cfg.spin(site)
    y = geometry.mul(x, np.asarray(xi, dtype=float), space)
    h_old = model.site_hamiltonian(site, cfg, params)
    new = cfg.with_spin(site, y)
    h_new = model.site_hamiltonian(site, new, params)
    with np.errstate(over="ignore"):
        if u < math.exp(min(h_old - h_new, 700.0)):
            return new
    return cfg.copy()


@dataclasses.dataclass
class QnEstimate:
    n: int
    mean: float
    stderr: float
    values: np.ndarray


def estimate_Qn_f(f: Callable, start: SpinConfig, n: int, params: ModelParams, chain: ChainSpec,
                  n_replicas: int, stream=(1,)) -> QnEstimate:
    """Replica average of ``f`` after the block updates realising ``Q^n``.

    ``f`` maps padded spin arrays (R, H+2, W+2, dim) to (R,).
    """
    if n_replicas < 2:
        raise ValueError("n_replicas must be >= 2 to form a standard error")
    if n < 0:
        raise ValueError("n must be >= 0")
    state = ChainState.replicate(params, chain, start, n_replicas, stream=tuple(stream) + (n,))
    state.run(SweepSchedule(n).chain_order())
    vals = np.asarray(f(state.spins), dtype=float)
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n_replicas))
    return QnEstimate(n, mean, stderr, vals)


def qn_trajectories(f: Callable, starts, n_max: int, params: ModelParams, chain: ChainSpec,
                    n_replicas: int, stream=(2,)) -> np.ndarray:
    """Samples of ``Q^n f(x)`` for ``n = 0..n_max`` and many start points.

    ``starts`` has shape (N, H+2, W+2, dim). Returns (n_max + 1, N, R): the
    ``R`` replica values at each ``n``. Odd ``n`` come from one family of
    chains (parities 0, 1, 0, ...) and even ``n`` from an independent family
    (1, 0, 1, ...): the prefix of length ``n`` of the right family is the
    chain order of ``Q^n``.
    """
    starts = np.asarray(starts, dtype=float)
    N = starts.shape[0]
    R = n_replicas
    out = np.empty((n_max + 1, N, R))
    out[0] = np.asarray(f(starts), dtype=float)[:, None]
    tiled = np.repeat(starts, R, axis=0)
    for first, tag in ((0, 0), (1, 1)):
        st = ChainState(params, chain, tiled, stream=tuple(stream) + (tag,))
        for length in range(1, n_max + 1):
            st.resample((first + length - 1) % 2)
            if operator_parity(length) == first:
                out[length] = np.asarray(f(st.spins), dtype=float).reshape(N, R)
    return out


@dataclasses.dataclass
class GibbsSamples:
    """Thinned equilibrium samples, shape (n_samples, n_chains, H+2, W+2, dim)."""

    spins: np.ndarray
    sweeps: np.ndarray
    params: ModelParams
    chain: ChainSpec
    acceptance: dict
    warnings: List[str]

    @property
    def flat(self) -> np.ndarray:
        s = self.spins
        return s.reshape((-1,) + s.shape[2:])

    def per_chain(self, values) -> np.ndarray:
        """Means of per-sample values over each chain, shape (n_chains,)."""
        v = np.asarray(values, dtype=float).reshape(self.spins.shape[0], self.spins.shape[1])
        return v.mean(axis=0)

    def mean_and_stderr(self, values):
        """Grand mean with the between-chain standard error."""
        cm = self.per_chain(values)
        k = len(cm)
        return float(cm.mean()), float(cm.std(ddof=1) / math.sqrt(k)) if k > 1 else float("nan")

    def manifest(self) -> dict:
        return {"seed": int(self.chain.seed), "chain": dataclasses.asdict(self.chain),
                "params": params_dict(self.params), "acceptance": self.acceptance,
                "warnings": list(self.warnings), "backend": kernels.NAME}

    def csv_rows(self, observables: Optional[dict] = None):
        """Header and rows: sweep, chain, then observables or per-site coordinates."""
        n, c = self.spins.shape[:2]
        inner = self.spins[:, :, 1:-1, 1:-1, :]
        if observables:
            names = list(observables)
            cols = [np.asarray(observables[k](self.flat), dtype=float).reshape(n, c) for k in names]
        else:
            H, W, dim = inner.shape[2:]
            names = [f"x_{a}_{b}_{k}" for a in range(H) for b in range(W) for k in range(dim)]
            flat = inner.reshape(n, c, -1)
            cols = [flat[..., j] for j in range(flat.shape[-1])]
        header = ["sweep", "chain"] + names
        rows = []
        for i in range(n):
            for j in range(c):
                rows.append([int(self.sweeps[i]), j] + [float(col[i, j]) for col in cols])
        return header, rows


def params_dict(params: ModelParams) -> dict:
    lat = params.lattice
    return {"spin_space": params.spin_space.value, "p": params.p, "r": params.r,
            "delta": params.delta, "J": params.J,
            "lattice": {"width": lat.width, "height": lat.height,
                        "boundary": None if lat.boundary is None else np.asarray(lat.boundary).tolist()}}


def sample_gibbs(params: ModelParams, chain: ChainSpec, start: Optional[SpinConfig] = None,
                 stream=(3,)) -> GibbsSamples:
    """Long-run alternating dynamics on ``params.lattice``: burn in, then keep
    every ``thinning``-th full sweep (parity 0 then parity 1)."""
    lattice = params.lattice
    cfg = start if start is not None else SpinConfig.identity(lattice, params.spin_space)
    state = ChainState.replicate(params, chain, cfg, chain.n_chains, stream=stream)
    for _ in range(chain.burn_in):
        state.run((0, 1))
    out = np.empty((chain.n_samples,) + state.spins.shape)
    sweeps = np.empty(chain.n_samples, dtype=np.int64)
    for i in range(chain.n_samples):
        for _ in range(chain.thinning):
            state.run((0, 1))
        out[i] = state.spins
        sweeps[i] = state.sweep // 2
    rate = state.acceptance_rate()
    notes = []
    lo, hi = ACCEPTANCE_BAND
    if not (lo <= rate <= hi):
        msg = f"acceptance rate {rate:.3f} outside [{lo}, {hi}]; consider changing proposal_scale"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    acc = {"overall": rate,
           "parity0": state.accepted[0] / state.proposed[0] if state.proposed[0] else None,
           "parity1": state.accepted[1] / state.proposed[1] if state.proposed[1] else None}
    return GibbsSamples(out, sweeps, params, chain, acc, notes)


def write_samples(samples: GibbsSamples, csv_path, manifest_path, observables=None):
    """CSV of samples plus the JSON manifest (both via atomic rename)."""
    from .io import atomic_write_csv, atomic_write_text

    header, rows = samples.csv_rows(observables)
    atomic_write_csv(csv_path, header, rows)
    atomic_write_text(manifest_path, json.dumps(samples.manifest(), indent=2, sort_keys=True))


def exact_line_nodes(params: ModelParams, n_nodes: int = 801, tail_level: float = 40.0) -> np.ndarray:
    L = tail_level ** (1.0 / params.p)
    return np.linspace(-L, L, n_nodes)


def _uniforms(seed, stream, shape):
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed)] + [int(s) for s in stream])))
    return g.random(shape)


def exact_block_update(spins, parity: int, params: ModelParams, U, nodes):
    """Exact block resampling of line spins by grid inverse CDF, in place."""
    if params.spin_space is not SpinSpace.LINE:
        raise ValueError("exact block resampling is implemented for line spins only")
    kernels.resample_exact_line(spins, parity, int(params.p), int(params.r), float(params.coupling),
                                np.ascontiguousarray(nodes, dtype=np.float64), np.ascontiguousarray(U))


def coupled_qn_pairs(f: Callable, starts, n: int, params: ModelParams, seed: int,
                     n_pairs: int, n_nodes: int = 801):
    """Coupled samples of ``Q^n f(x)`` and ``Q^{n+1} f(x)`` from exact-resampling chains.

    The ``Q^{n+1}`` chain makes its extra first update, then both chains run
    the ``n`` updates of ``Q^n`` with common uniforms, so their difference
    contracts with the dynamics and so does its noise. Line spins only.
    Returns ``(f(X), f(Y))``, each (N, n_pairs), for the N start
    configurations; ``f(X)`` samples ``Q^n f`` and ``f(Y)`` samples ``Q^{n+1} f``.
    """
    starts = np.asarray(starts, dtype=float)
    N = starts.shape[0]
    X = np.ascontiguousarray(np.repeat(starts, n_pairs, axis=0))
    Y = X.copy()
    R, Hp, Wp, _ = X.shape
    shape = (R, Hp - 2, Wp - 2)
    nodes = exact_line_nodes(params, n_nodes)
    exact_block_update(Y, operator_parity(n + 1), params, _uniforms(seed, (n, 1 << 20), shape), nodes)
    for step, k in enumerate(range(n, 0, -1)):
        U = _uniforms(seed, (n, step), shape)
        exact_block_update(X, operator_parity(k), params, U, nodes)
        exact_block_update(Y, operator_parity(k), params, U, nodes)
    fx = np.asarray(f(X), dtype=float).reshape(N, n_pairs)
    fy = np.asarray(f(Y), dtype=float).reshape(N, n_pairs)
    return fx, fy
