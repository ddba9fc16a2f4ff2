"""Sample-based estimators: plug-in entropy, jackknife and bootstrap over blocks.

Blocks are independent chains (or independent start points), so the
estimators stay honest under autocorrelation within a chain.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import xlogy


def plugin_entropy(values) -> float:
    """``mean(v log v) - mean(v) log mean(v)`` for nonnegative samples ``v``."""
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    return float(np.mean(xlogy(v, v))) - float(xlogy(m, m))


def block_moments(values, n_blocks):
    """Reshape (n_samples * n_blocks,) sample-major values into (n_blocks, n_per)."""
    v = np.asarray(values, dtype=float)
    return v.reshape(-1, n_blocks).T


def jackknife(stat, blocks):
    """Jackknife over blocks (K, ...): bias-corrected estimate and standard error.

    ``stat`` maps an array of blocks (k, ...) to a scalar.
    """
    K = len(blocks)
    full = stat(blocks)
    if K < 2:
        return full, float("nan")
    loo = np.array([stat(np.delete(blocks, k, axis=0)) for k in range(K)])
    corrected = K * full - (K - 1) * loo.mean()
    se = math.sqrt((K - 1) / K * np.sum((loo - loo.mean()) ** 2))
    return float(corrected), float(se)


def bootstrap(stat, blocks, n_boot=200, seed=0):
    """Block bootstrap standard error and the replicate values."""
    K = len(blocks)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xB007])))
    reps = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, K, K)
        reps[b] = stat(blocks[idx])
    return float(np.std(reps, ddof=1)), reps


def mean_stderr(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def ratio_stderr(num, den):
    """Delta-method standard error of ``mean(num) / mean(den)`` over paired blocks."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    K = num.size
    mn, md = num.mean(), den.mean()
    if K < 2 or md == 0:
        return float("nan")
    r = mn / md
    resid = (num - r * den) / md
    return float(resid.std(ddof=1) / math.sqrt(K))
