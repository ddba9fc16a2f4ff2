"""Command line: ``spinlsi run <config>``, ``golden-check <dir>``, ``regen-golden <dir>``.

Exit codes: 0 success, 1 checks failed, 2 invalid config, 3 solver or
oracle failure (the partial manifest is kept), 4 missing golden file.
"""
from __future__ import annotations

import argparse
import datetime
import json
import sys
import time
import traceback
from pathlib import Path

from . import experiments
from .config import ConfigError, load_config
from .geometry import CCSolverError
from .golden import GoldenMissing, golden_check, regen_golden, versions
from .io import atomic_write_csv, atomic_write_text
from .quadrature import QuadratureError

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_SOLVER, EXIT_GOLDEN = 0, 1, 2, 3, 4
SOLVER_ERRORS = (QuadratureError, CCSolverError, FloatingPointError, ArithmeticError)


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_svg(path, plot):
    try:
        import matplotlib

        matplotlib.use("Agg")
        matplotlib.rcParams["svg.hashsalt"] = "spinlsi"
        import matplotlib.pyplot as plt
    except ImportError:
        return "matplotlib not installed; svg skipped"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(plot["x"], plot["y"], yerr=plot.get("yerr"), marker="o", capsize=3)
    ax.set_xlabel(plot["xlabel"])
    ax.set_ylabel(plot["ylabel"])
    fig.tight_layout()
    tmp = Path(path).with_suffix(".tmp.svg")
    # fixed metadata keeps the svg reproducible
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    tmp.replace(path)
    return None


def run(config_path) -> int:
    start = time.perf_counter()
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.raw, "config_path": str(config_path), "experiment": cfg.experiment,
                "seed": int(cfg.chain.seed), "versions": versions(), "started": _now(), "files": [],
                "status": "running"}
    status = EXIT_OK
    try:
        outcome = experiments.DRIVERS[cfg.experiment](cfg)
        for name, table in sorted(outcome.tables.items()):
            if cfg.emit.csv:
                atomic_write_csv(out_dir / f"{name}.csv", table.header, table.rows)
                manifest["files"].append(f"{name}.csv")
        for name, doc in sorted(outcome.documents.items()):
            if cfg.emit.json:
                atomic_write_text(out_dir / f"{name}.json", _dump(doc))
                manifest["files"].append(f"{name}.json")
        if cfg.emit.svg:
            for name, plot in sorted(outcome.plots.items()):
                note = _write_svg(out_dir / f"{name}.svg", plot)
                if note:
                    manifest.setdefault("notes", []).append(note)
                else:
                    manifest["files"].append(f"{name}.svg")
        manifest["summary"] = outcome.summary
        for line in outcome.summary:
            print(line)
        status = EXIT_OK if outcome.ok else EXIT_CHECKS
        manifest["status"] = "ok" if outcome.ok else "checks failed"
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        manifest["status"] = "solver failure"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["traceback"] = traceback.format_exc()
        status = EXIT_SOLVER
    finally:
        manifest["wall_time_s"] = time.perf_counter() - start
        manifest["exit_code"] = status
        manifest["finished"] = _now()
        atomic_write_text(out_dir / "manifest.json", _dump(manifest))
    return status


def _golden(directory, regen: bool) -> int:
    directory = Path(directory)
    if regen:
        path = regen_golden(directory, when=_now())
        print(f"golden file rewritten: {path}")
        return EXIT_OK
    try:
        res = golden_check(directory)
    except GoldenMissing as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_GOLDEN
    if res["passed"]:
        print("golden check passed")
        return EXIT_OK
    for f in res["failures"]:
        print(f"FAIL {f['key']}: golden {f['golden']!r} current {f['current']!r}")
    for k in res["missing"]:
        print(f"FAIL {k}: not produced by the current build")
    return EXIT_CHECKS


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="spinlsi", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a YAML config")
    p_run.add_argument("config")
    p_chk = sub.add_parser("golden-check", help="compare current reference values with <dir>/golden.txt")
    p_chk.add_argument("directory")
    p_reg = sub.add_parser("regen-golden", help="rewrite <dir>/golden.txt from the current build")
    p_reg.add_argument("directory")
    args = ap.parse_args(argv)
    if args.command == "run":
        return run(args.config)
    return _golden(args.directory, regen=args.command == "regen-golden")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
