"""Golden-file regression of frozen reference values.

The file ``golden.txt`` is plain text: a version header, then one
``key value rel_tol abs_tol`` line per value. A value passes when
``|current - golden| <= abs_tol + rel_tol * |golden|``.
"""
from __future__ import annotations

import json
import math
import platform
from pathlib import Path

import numpy as np

from . import __version__, dynamics, geometry, inequalities as iq, model
from ._backend import kernels
from .geometry import SpinSpace
from .io import atomic_write_text
from .quadrature import GridSpec, SiteMeasureSpec, SiteQuadrature, site_functionals
from .testfunctions import Bump, Shifted, TestFunction, pair_family

GOLDEN_NAME = "golden.txt"
HEADER = "# spinlsi golden values, format 1"


class GoldenMissing(FileNotFoundError):
    pass


def _values():
    """(key, value, rel_tol, abs_tol) for every frozen reference value."""
    H, L = SpinSpace.HEISENBERG1, SpinSpace.LINE
    out = []
    d = geometry.metric_d(np.array([[0.0, 0.0, 1.0], [3.0, 4.0, 0.0], [1.0, 1.0, 0.3], [0.5, -1.0, 2.0]]), H)
    out += [("cc_distance_vertical", d[0], 1e-12, 0.0), ("cc_distance_planar_345", d[1], 1e-12, 0.0),
            ("cc_distance_1_1_0.3", d[2], 1e-11, 0.0), ("cc_distance_0.5_-1_2", d[3], 1e-11, 0.0)]
    p0 = model.ModelParams(L, 4, 3, 0.0)
    q = SiteQuadrature(SiteMeasureSpec(p0), GridSpec(points_per_axis=128))
    x = q.points[:, 0]
    out.append(("gamma_quartic_moment", q.expect(x * x), 1e-10, 0.0))
    bump = TestFunction({(0, 0): Bump(L, 0.0, 1.5)})
    sf = site_functionals(bump.as_site_function(), SiteMeasureSpec(p0), GridSpec(points_per_axis=128,
                                                                                  breakpoints=(1.5,)))
    out.append(("lsi_ratio_bump_0_1.5_line", sf["lsi_ratio"], 1e-9, 0.0))
    p5 = model.ModelParams(L, 4, 3, 0.05, lattice=model.LatticeSpec(4, 4))
    rep = iq.fit_sweep_contraction(pair_family(L, *iq.SITE_PAIR), p5, boundary=(0.5,))
    out += [("sweep_D1_delta0.05", rep.constants["D1"], 1e-7, 0.0),
            ("sweep_D2_delta0.05", rep.constants["D2"], 1e-6, 0.0)]
    g = TestFunction({(0, 0): Shifted(Bump(L, 0.0, 1.5), 1.0)})
    tel = iq.check_entropy_telescoping(g, 2, p5.replace(delta=0.1))
    out.append(("telescoping_residual_n2_delta0.1", tel["residual"], 0.0, 1e-10))
    out.append(("telescoping_variant_residual_n2_delta0.1", tel["variant_residual"], 1e-8, 0.0))
    samples = dynamics.sample_gibbs(p5, dynamics.ChainSpec(seed=3, burn_in=50, n_samples=8, thinning=2,
                                                           n_chains=8))
    fx, fy = dynamics.coupled_qn_pairs(TestFunction({(1, 1): Bump(L, 0.0, 1.5)}), samples.flat, 1, p5, 3, 4)
    out.append(("coupled_qn_difference_mean_n1", float(np.mean(fx - fy)), 1e-8, 1e-15))
    return [(k, float(v), rt, at) for k, v, rt, at in out]


def format_golden(values) -> str:
    lines = [HEADER, "# key value rel_tol abs_tol"]
    lines += [f"{k} {v!r} {rt!r} {at!r}" for k, v, rt, at in values]
    return "\n".join(lines) + "\n"


def parse_golden(text: str):
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ValueError("not a spinlsi golden file (bad header)")
    out = {}
    for ln, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {ln}: expected 'key value rel_tol abs_tol'")
        out[parts[0]] = tuple(float(v) for v in parts[1:])
    return out


def compare(golden: dict, current) -> dict:
    failures, missing = [], []
    cur = {k: v for k, v, _, _ in current}
    for key, (gv, rt, at) in golden.items():
        if key not in cur:
            missing.append(key)
            continue
        cv = cur[key]
        if not (abs(cv - gv) <= at + rt * abs(gv)) or math.isnan(cv):
            failures.append({"key": key, "golden": gv, "current": cv, "rel_tol": rt, "abs_tol": at})
    extra = sorted(set(cur) - set(golden))
    return {"passed": not failures and not missing, "failures": failures, "missing": missing, "new_keys": extra}


def golden_check(directory, current=None) -> dict:
    path = Path(directory) / GOLDEN_NAME
    if not path.exists():
        raise GoldenMissing(f"no golden file at {path}; run 'spinlsi regen-golden {directory}' to create it")
    golden = parse_golden(path.read_text())
    return compare(golden, _values() if current is None else current)


def regen_golden(directory, current=None, when: str = None) -> Path:
    directory = Path(directory)
    values = _values() if current is None else current
    path = directory / GOLDEN_NAME
    atomic_write_text(path, format_golden(values))
    manifest = {"event": "golden regenerated", "file": GOLDEN_NAME, "n_values": len(values),
                "versions": versions(), "time": when}
    atomic_write_text(directory / "golden_manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def versions() -> dict:
    import scipy
    import yaml

    return {"spinlsi": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__, "backend": kernels.NAME}
