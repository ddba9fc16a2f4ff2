import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinlsi import estimators


def _two_valued_entropy(p, a, b):
    # Ent of a two-valued variable taking a w.p. p and b w.p. 1 - p
    m = p * a + (1 - p) * b
    return p * a * math.log(a) + (1 - p) * b * math.log(b) - m * math.log(m)


def test_plugin_entropy_converges_like_inverse_root_n():
    rng = np.random.default_rng(0)
    p, a, b = 0.3, 4.0, 0.25
    exact = _two_valued_entropy(p, a, b)
    errs = []
    for n in (1000, 16000, 256000):
        reps = [estimators.plugin_entropy(np.where(rng.random(n) < p, a, b)) for _ in range(40)]
        errs.append(math.sqrt(np.mean((np.array(reps) - exact) ** 2)))
    # 16x more samples: error down by about 4
    assert 2.5 < errs[0] / errs[1] < 6.5
    assert 2.5 < errs[1] / errs[2] < 6.5


@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=40))
def test_plugin_entropy_nonnegative_and_scale_covariant(v):
    v = np.array(v)
    e = estimators.plugin_entropy(v)
    assert e >= -1e-9 * max(1.0, v.max())
    assert estimators.plugin_entropy(3 * v) == pytest.approx(3 * e, rel=1e-9, abs=1e-9)


def test_jackknife_removes_ratio_bias_and_sizes_error():
    rng = np.random.default_rng(1)
    blocks = rng.normal(2.0, 1.0, size=(32, 50))
    est, se = estimators.jackknife(lambda b: float(np.mean(b)), blocks)
    assert est == pytest.approx(blocks.mean(), abs=1e-12)
    assert se == pytest.approx(blocks.mean(axis=1).std(ddof=1) / math.sqrt(32), rel=1e-10)
    est1, se1 = estimators.jackknife(lambda b: float(np.mean(b)), blocks[:1])
    assert math.isnan(se1)


def test_bootstrap_reproducible():
    blocks = np.random.default_rng(2).normal(size=(20, 10))
    a = estimators.bootstrap(lambda b: float(b.mean()), blocks, n_boot=50, seed=7)
    b = estimators.bootstrap(lambda b: float(b.mean()), blocks, n_boot=50, seed=7)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])
    assert 0 < a[0] < 1


def test_ratio_stderr_delta_method():
    rng = np.random.default_rng(3)
    num = rng.normal(2.0, 0.1, 400)
    den = rng.normal(4.0, 0.1, 400)
    se = estimators.ratio_stderr(num, den)
    ratios = [np.mean(rng.normal(2.0, 0.1, 400)) / np.mean(rng.normal(4.0, 0.1, 400)) for _ in range(400)]
    assert se == pytest.approx(np.std(ratios), rel=0.2)
    assert math.isnan(estimators.ratio_stderr([1.0], [1.0]))
