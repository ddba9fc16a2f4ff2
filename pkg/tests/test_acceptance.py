"""End-to-end acceptance suite: eight criteria, one PASS/FAIL line each.

Criteria 1-7 run experiments through ``spinlsi run`` on generated configs
and check the emitted JSON; criterion 8 reruns every config with the same
seeds and compares the output files byte for byte. A summary block with one
line per criterion is printed at the end of the pytest session.
"""
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import pytest
import yaml

from spinlsi import cli, inequalities as iq
from spinlsi.geometry import SpinSpace
from spinlsi.model import ModelParams
from spinlsi.quadrature import SiteMeasureSpec, SiteQuadrature

import conftest
import oracles

pytestmark = pytest.mark.acceptance

LINE4 = {"spin_space": "line", "p": 4, "r": 3}
H1_4 = {"spin_space": "heisenberg1", "p": 4, "r": 3}


def _scan(inequality, extra):
    out = []
    for d in iq.DELTA_SCAN:
        tree = {"experiment": "inequality", "inequality": inequality,
                "model": dict(LINE4, delta=d, **extra.get("model", {}))}
        tree.update({k: v for k, v in extra.items() if k != "model"})
        out.append((f"{inequality}-{d:g}", tree))
    return out


SUITES = {
    "geometry": [("h1", {"experiment": "verify-geometry", "model": dict(H1_4, delta=0.02),
                         "options": {"n_points": 1000}})],
    "audit": [
        ("h1", {"experiment": "audit-model", "model": dict(H1_4, delta=0.02)}),
        ("line", {"experiment": "audit-model", "model": dict(LINE4, delta=0.02)}),
        ("h1-python", {"experiment": "audit-model", "model": dict(H1_4, delta=0.02)}),
        ("line-python", {"experiment": "audit-model", "model": dict(LINE4, delta=0.02)}),
        ("negative", {"experiment": "audit-model", "model": dict(H1_4, p=1, delta=0.02, strict=False)}),
    ],
    "single_site": [
        ("line", {"experiment": "single-site", "model": dict(LINE4, delta=0.05),
                  "chain": {"seed": 1, "n_samples": 2000, "burn_in": 200, "n_chains": 16},
                  "options": {"n_functions": 5}}),
        ("h1", {"experiment": "single-site", "model": dict(H1_4, delta=0.02),
                "chain": {"seed": 1, "n_samples": 2000, "burn_in": 200, "n_chains": 16},
                "grid": {"points_per_axis": 48}, "options": {"n_functions": 5}}),
    ],
    "telescoping": [(f"delta-{d:g}", {"experiment": "telescoping", "model": dict(LINE4, delta=d),
                                      "options": {"n_max": 3}}) for d in (0.0, 0.1)],
    "contraction": (_scan("sweep-contraction", {"options": {"level": "site"}})
                    + _scan("sqrt-sweep", {"options": {"level": "site"}})
                    + _scan("weak-lsi", {"model": {"lattice": {"width": 4, "height": 4}},
                                         "chain": {"seed": 5, "n_samples": 1000, "burn_in": 200}})),
    "convergence": [
        (name, {"experiment": "sweep-decay", "model": dict(LINE4, delta=d, lattice={"width": 4, "height": 4}),
                "chain": {"seed": 1, "burn_in": 100, "n_samples": 16, "thinning": 2, "n_chains": 16},
                "options": {"n_max": 6, "n_pairs": 8, "method": "coupled", "site": site}})
        for name, d, site in (("coupled", 0.05, [1, 1]), ("uncoupled-even", 0.0, [1, 1]),
                              ("uncoupled-odd", 0.0, [1, 2]))
    ],
    "headline": [
        ("global", {"experiment": "inequality", "inequality": "global-lsi",
                    "model": dict(H1_4, delta=0.02, lattice={"width": 4, "height": 4}),
                    "chain": {"seed": 11, "n_samples": 1000, "burn_in": 200, "n_chains": 16},
                    "options": {"compare_width": 6}}),
        ("tail", {"experiment": "inequality", "inequality": "tail-bound",
                  "model": dict(H1_4, delta=0.02, lattice={"width": 4, "height": 4}),
                  "chain": {"seed": 11, "n_samples": 1000, "burn_in": 200, "n_chains": 16}}),
    ],
}

# wall-clock budgets in seconds
BUDGET = {"geometry": 60, "audit": 60, "single_site": 300, "telescoping": 120, "contraction": 1800,
          "convergence": 1800, "headline": 7200}

# manifest fields that legitimately differ between two runs
VOLATILE = {"started", "finished", "wall_time_s", "config_path", "config"}


def _run_one(label, tree, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    tree = dict(tree, output_dir=str(directory / "out"))
    path = directory / "config.yaml"
    path.write_text(yaml.safe_dump(tree, sort_keys=True))
    if label.endswith("-python"):
        env = dict(os.environ, SPINLSI_BACKEND="python")
        code = subprocess.run([sys.executable, "-m", "spinlsi.cli", "run", str(path)], env=env,
                              capture_output=True, text=True).returncode
    else:
        code = cli.run(path)
    files = {p.name: p.read_bytes() for p in sorted((directory / "out").iterdir())}
    return code, files


def _run_suite(name, root: Path):
    start = time.perf_counter()
    runs = {label: _run_one(label, tree, root / name / label) for label, tree in SUITES[name]}
    return runs, time.perf_counter() - start


_FIRST = {}


@pytest.fixture(scope="module")
def first(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_first")

    def get(name):
        if name not in _FIRST:
            _FIRST[name] = _run_suite(name, root)
        return _FIRST[name]

    return get


def _doc(files, name):
    return json.loads(files[name])


def _record(number, title, ok, detail):
    line = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)


def _check(number, title, checks, elapsed, budget):
    checks = dict(checks, **{f"within {budget}s budget": elapsed < budget})
    failed = [k for k, v in checks.items() if not v]
    detail = f"{elapsed:.0f}s" + (f"; failed: {', '.join(failed)}" if failed else "")
    _record(number, title, not failed, detail)
    assert not failed, failed


def test_1_geometry(first):
    runs, elapsed = first("geometry")
    code, files = runs["h1"]
    g = _doc(files, "geometry.json")
    _check(1, "geometry", {
        "exit 0": code == 0,
        "associativity 1e-12": g["associativity_error"] <= 1e-12,
        "inverse 1e-12": g["inverse_error"] <= 1e-12,
        "d(3,4,0)=5": abs(g["d_probe"] - 5.0) <= 1e-6,
        "eikonal 1e-3 on 1000 points": g["max_eikonal_residual"] <= 1e-3 and files["eikonal.csv"].count(b"\n") == 1001,
        "K stable 20%": g["K_relative_change"] <= 0.2,
    }, elapsed, BUDGET["geometry"])


def test_2_audit(first):
    runs, elapsed = first("audit")
    checks = {}
    for label in ("h1", "line", "h1-python", "line-python"):
        code, files = runs[label]
        checks[f"{label} passes"] = code == 0 and _doc(files, "audit.json")["passed"]
    code, files = runs["negative"]
    neg = _doc(files, "audit.json")
    failed = [e["name"] for e in neg["entries"] if e["verdict"] != "PASS"]
    checks["negative control fails phase_growth"] = code == 0 and not neg["passed"] and "phase_growth" in failed
    _check(2, "assumption audit", checks, elapsed, BUDGET["audit"])


def test_3_oracle_mcmc(first):
    runs, elapsed = first("single_site")
    checks = {}
    for label in ("line", "h1"):
        code, files = runs[label]
        rows = files["single_site.csv"].decode().splitlines()[1:]
        z = [abs(float(r.split(",")[-1])) for r in rows]
        checks[f"{label}: 5 functions within 3 stderr"] = code == 0 and len(z) == 5 and max(z) <= 3.0
    q = SiteQuadrature(SiteMeasureSpec(ModelParams(SpinSpace.LINE, 4, 3, 0.0)))
    moment = q.expect(q.points[:, 0] ** 2)
    checks["Gamma moment 1e-6"] = abs(moment - 0.33799) < 1e-5 and abs(moment - oracles.gamma_quartic_moment()) < 1e-6
    _check(3, "oracle/MCMC agreement", checks, elapsed, BUDGET["single_site"])


def test_4_telescoping(first):
    runs, elapsed = first("telescoping")
    checks = {}
    for label, (code, files) in runs.items():
        rows = files["telescoping.csv"].decode().splitlines()[1:]
        res = [float(r.split(",")[1]) for r in rows]
        checks[f"{label}: n<=3 residual <= 1e-6"] = code == 0 and len(res) == 4 and max(res) <= 1e-6
    _check(4, "telescoping identity", checks, elapsed, BUDGET["telescoping"])


def _scan_values(runs, inequality, file, key):
    vals, ses, codes = [], [], []
    for d in iq.DELTA_SCAN:
        code, files = runs[f"{inequality}-{d:g}"]
        rep = _doc(files, file)[0]
        vals.append(rep["constants"][key])
        ses.append(rep["stderr"].get(key) or 0.0)
        codes.append(code)
    return vals, ses, codes


def test_5_contraction(first):
    runs, elapsed = first("contraction")
    k = iq.DELTA_SCAN.index(0.05)
    checks = {}
    for inequality, file, key in (("sweep-contraction", "sweep_contraction.json", "D2"),
                                  ("sqrt-sweep", "sqrt_sweep.json", "G2"),
                                  ("weak-lsi", "weak_lsi.json", "c2")):
        vals, ses, codes = _scan_values(runs, inequality, file, key)
        checks[f"{key} < 1 at delta=0.05 ({vals[k]:.3g})"] = vals[k] < 1.0 and codes[k] == 0
        checks[f"{key} nondecreasing in delta"] = iq.monotone_trend(vals, ses, slack=3.0)["monotone"]
    _check(5, "contraction suite", checks, elapsed, BUDGET["contraction"])


def test_6_convergence(first):
    runs, elapsed = first("convergence")
    code, files = runs["coupled"]
    rep = _doc(files, "qn_decay.json")[0]
    c = rep["constants"]
    checks = {"exit 0": code == 0,
              f"R^2 >= 0.95 ({c['r_squared']:.4f})": c["r_squared"] is not None and c["r_squared"] >= 0.95,
              f"R < 1 ({c['R']:.3g})": c["R"] is not None and c["R"] < 1.0}
    for label in ("uncoupled-even", "uncoupled-odd"):
        code, files = runs[label]
        rep = _doc(files, "qn_decay.json")[0]
        n_stop = rep["diagnostics"].get("exact_termination_n")
        checks[f"delta=0 {label} exact after <= 2 sweeps"] = code == 0 and n_stop is not None and n_stop <= 2
    n_odd = _doc(runs["uncoupled-odd"][1], "qn_decay.json")[0]["diagnostics"].get("exact_termination_n")
    checks["odd-site observable needs both sweeps"] = n_odd == 2
    _check(6, "sweep convergence", checks, elapsed, BUDGET["convergence"])


def test_7_headline(first):
    runs, elapsed = first("headline")
    code, files = runs["global"]
    small, large = _doc(files, "global_lsi.json")
    stab = _doc(files, "window_stability.json")
    C, se = small["constants"]["C"], small["stderr"]["C"]
    checks = {"exit 0": code == 0,
              f"finite C ({C:.4f})": isinstance(C, float) and C > 0,
              f"bootstrap stderr < 25% ({se / C:.3f})": se < 0.25 * C,
              f"6x6 within 50% ({stab['relative_change']:.3f})": stab["stable"] and stab["relative_change"] <= 0.5}
    code, files = runs["tail"]
    glob, tail = _doc(files, "tail_bound.json")
    checks["tail bound at every h"] = code == 0 and tail["verdict"] == "PASS" and all(r["pass"] for r in tail["rows"])
    _check(7, "headline experiment", checks, elapsed, BUDGET["headline"])


def _stable_manifest(blob):
    m = json.loads(blob)
    return {k: v for k, v in m.items() if k not in VOLATILE}


def test_8_determinism(first, tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_second")
    start = time.perf_counter()
    diffs = []
    for name in SUITES:
        runs_a, _ = first(name)
        runs_b, _ = _run_suite(name, root)
        for label in runs_a:
            fa, fb = runs_a[label][1], runs_b[label][1]
            if sorted(fa) != sorted(fb):
                diffs.append(f"{name}/{label}: file sets differ")
                continue
            for fn in fa:
                if fn == "manifest.json":
                    same = _stable_manifest(fa[fn]) == _stable_manifest(fb[fn])
                else:
                    same = fa[fn] == fb[fn]
                if not same:
                    diffs.append(f"{name}/{label}/{fn}")
    elapsed = time.perf_counter() - start
    n_files = sum(len(r[1]) for name in SUITES for r in first(name)[0].values())
    detail = f"{n_files} files compared, {elapsed:.0f}s" + (f"; differ: {', '.join(diffs)}" if diffs else "")
    _record(8, "determinism", not diffs, detail)
    assert not diffs, diffs
