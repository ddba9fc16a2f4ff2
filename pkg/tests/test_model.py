import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinlsi import model
from spinlsi.geometry import SpinSpace
from spinlsi.model import LatticeSpec, ModelParams, SpinConfig

LINE, H1 = SpinSpace.LINE, SpinSpace.HEISENBERG1


def test_binomial_expansion_value():
    assert model.interaction_expanded(1.0, 2.0, 3) == pytest.approx(27.0, abs=1e-12)
    assert model.interaction_reduced(1.0, 2.0, 3) == pytest.approx(19.0, abs=1e-12)


@given(st.floats(0, 10), st.floats(0, 10), st.integers(1, 6))
def test_expansion_matches_power(dx, dw, r):
    assert math.isclose(model.interaction_expanded(dx, dw, r), (dx + dw) ** r, rel_tol=1e-12, abs_tol=1e-12)


def test_parameter_validation():
    with pytest.raises(ValueError):
        ModelParams(LINE, 1, 3, 0.1)
    with pytest.raises(ValueError):
        ModelParams(LINE, 4, 4, 0.1)  # r > (p + 2) / 2
    with pytest.raises(ValueError):
        ModelParams(LINE, 4, 2, 0.1)  # r must exceed 2
    with pytest.raises(ValueError):
        ModelParams(LINE, 4, 3, -0.1)
    ModelParams(LINE, 1, 3, 0.1, strict=False)
    assert ModelParams(LINE, 4, 3, 0.1).example_violations() == []
    with pytest.raises(ValueError):
        LatticeSpec(0, 3)


def test_site_outside_window_rejected():
    params = ModelParams(LINE, 4, 3, 0.1, lattice=LatticeSpec(3, 3))
    cfg = SpinConfig.identity(params.lattice, LINE)
    with pytest.raises(IndexError):
        model.site_hamiltonian((3, 0), cfg, params)
    with pytest.raises(ValueError):
        SpinConfig(params.lattice, LINE, np.full((3, 3, 1), np.nan))


def test_total_energy_by_hand_two_sites():
    params = ModelParams(LINE, 4, 3, 0.5, lattice=LatticeSpec(2, 1, boundary=(1.0,)))
    cfg = SpinConfig(params.lattice, LINE, np.array([[[0.5], [-2.0]]]))
    # four unit boundary spins around each site except the shared edge
    by_hand = 0.5 ** 4 + 2.0 ** 4 + 0.5 * ((0.5 + 2.0) ** 3 + 3 * (1.5 ** 3) + 3 * (3.0 ** 3))
    assert model.total_hamiltonian(cfg, params) == pytest.approx(by_hand, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2), st.integers(0, 2), st.floats(-2, 2), st.integers(0, 1000), st.booleans())
def test_site_energy_consistent_with_total(a, b, y, seed, heis):
    space = H1 if heis else LINE
    params = ModelParams(space, 4, 3, 0.2, lattice=LatticeSpec(3, 3))
    rng = np.random.default_rng(seed)
    cfg = SpinConfig(params.lattice, space, rng.normal(size=(3, 3, space.dim)))
    new = cfg.with_spin((a, b), np.full(space.dim, y))
    d_total = model.total_hamiltonian(new, params) - model.total_hamiltonian(cfg, params)
    d_site = model.site_hamiltonian((a, b), new, params) - model.site_hamiltonian((a, b), cfg, params)
    assert d_total == pytest.approx(d_site, rel=1e-9, abs=1e-9)


def test_batch_matches_scalar():
    params = ModelParams(H1, 4, 3, 0.1, lattice=LatticeSpec(3, 2))
    rng = np.random.default_rng(1)
    cfgs = [SpinConfig(params.lattice, H1, rng.normal(size=(2, 3, 3))) for _ in range(5)]
    batch = np.stack([c.array for c in cfgs])
    tot = model.batch_total_hamiltonian(batch, params)
    site = model.batch_site_hamiltonian(batch, (1, 2), params)
    for k, c in enumerate(cfgs):
        assert tot[k] == pytest.approx(model.total_hamiltonian(c, params), rel=1e-13)
        assert site[k] == pytest.approx(model.site_hamiltonian((1, 2), c, params), rel=1e-13)


def test_boundary_array_shapes():
    lat = LatticeSpec(2, 2, boundary=(0.0, 0.0, 1.0))
    arr = lat.boundary_array(H1)
    assert arr.shape == (4, 4, 3)
    assert np.all(arr[0, 1:-1] == [0, 0, 1]) and np.all(arr[1:-1, 1:-1] == 0)
    with pytest.raises(ValueError):
        LatticeSpec(2, 2, boundary=np.zeros((3, 3, 3))).boundary_array(H1)
