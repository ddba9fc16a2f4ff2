import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinlsi import geometry
from spinlsi.audit import default_sample_points
from spinlsi.geometry import SpinSpace
from spinlsi.model import ModelParams
from spinlsi.quadrature import SiteMeasureSpec, site_functionals
from spinlsi.testfunctions import (Bump, Const, CoordBump, Shifted, SoftClip, TestFunction, block_family,
                                   pair_family, single_site_family)

LINE, H1 = SpinSpace.LINE, SpinSpace.HEISENBERG1


@pytest.mark.parametrize("space", [LINE, H1])
def test_factor_gradients_match_finite_differences(space):
    pts = default_sample_points(space, 200, seed=2)
    factors = [f.factors[(0, 0)] for f in single_site_family(space)] + [SoftClip(space, 0, 2.0)]
    for fac in factors:
        fd = geometry.horizontal_grad(fac, pts, space, h=1e-6)
        assert np.max(np.abs(fd - fac.grad(pts))) < 1e-6, str(fac)


def test_product_rule_gradient():
    f = TestFunction({(0, 0): CoordBump(H1, 0, 0.0, 2.0), (1, 0): Shifted(Bump(H1, 0.0, 1.5), 0.5)}, scale=3.0)
    rng = np.random.default_rng(0)
    spins = rng.normal(size=(50, 4, 3, 3)) * 0.7
    g = f.site_gradient(spins, (1, 0))

    def at_site(x):
        s = spins.copy()
        s[:, 2, 1, :] = x
        return f(s)

    fd = geometry.horizontal_grad(at_site, spins[:, 2, 1, :], H1, h=1e-6)
    assert np.max(np.abs(fd - g)) < 1e-6
    assert np.all(f.site_gradient(spins, (1, 1)) == 0)


def test_bump_support_and_peak():
    b = Bump(LINE, 1.0, 0.5)
    x = np.array([[0.5], [1.0], [1.5], [-1.0], [2.0]])
    assert np.allclose(b(x), [0.0, 1.0, 0.0, 1.0, 0.0])
    assert b.support_edges() == (0.5, 1.5)
    assert Bump(LINE, 0.0, 1.0).support_edges() == (1.0,)


def test_families_are_nonconstant_and_named():
    for fam in (single_site_family(LINE), single_site_family(H1), pair_family(LINE, (0, 0), (0, 1)),
                block_family(LINE, [(0, 0), (1, 1)], [(0, 1), (1, 0)])):
        assert len(fam) >= 12
        assert len({f.name for f in fam}) == len(fam)


def test_constructor_validation():
    with pytest.raises(ValueError):
        TestFunction({})
    with pytest.raises(ValueError):
        TestFunction({(0, 0): Bump(LINE), (0, 1): Bump(H1)})
    with pytest.raises(ValueError):
        TestFunction({(0, 0): Bump(LINE), (0, 1): Bump(LINE)}).as_site_function()
    assert not TestFunction({(0, 0): Const(LINE, 2.0)}).depends_on((0, 0))


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 19))
def test_lsi_ratio_is_scale_invariant(c, k):
    spec = SiteMeasureSpec(ModelParams(LINE, 4, 3, 0.0))
    f = single_site_family(LINE)[k]
    a = site_functionals(f.as_site_function(), spec)["lsi_ratio"]
    b = site_functionals(f.scaled(c).as_site_function(), spec)["lsi_ratio"]
    assert abs(a - b) <= 1e-10 * abs(a)
