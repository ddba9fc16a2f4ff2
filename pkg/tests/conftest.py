import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def line_samples_4x4():
    from spinlsi import dynamics, model
    from spinlsi.geometry import SpinSpace

    params = model.ModelParams(SpinSpace.LINE, 4, 3, 0.05, lattice=model.LatticeSpec(4, 4))
    return dynamics.sample_gibbs(params, dynamics.ChainSpec(seed=5, n_samples=500, burn_in=100))
