"""Run configuration: YAML text validated into typed parameter objects.

Schema (keys not listed are rejected)::

    experiment: verify-geometry | audit-model | single-site | sweep-decay
                | inequality | lsi-scan | telescoping
    inequality: <name>            # required when experiment = inequality
    output_dir: results/run       # relative paths resolve against SPINLSI_OUTPUT_ROOT
    workers: 1
    model:   {spin_space, p, r, delta, J, strict, lattice: {width, height, boundary}}
    chain:   {seed, proposal_scale, inner_steps, burn_in, n_samples, thinning, n_chains}
    grid:    {half_width, points_per_axis, rule, tail_level, tail_tol}
    emit:    {csv, json, svg}
    options: {...}                # experiment specific, see OPTION_KEYS

``model.spin_space``, ``model.p``, ``model.r``, ``model.delta``,
``experiment`` and ``output_dir`` are required.
"""
from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Any, Dict

import yaml

from .dynamics import ChainSpec
from .geometry import SpinSpace
from .model import LatticeSpec, ModelParams
from .quadrature import RULES, GridSpec

OUTPUT_ROOT_ENV = "SPINLSI_OUTPUT_ROOT"

EXPERIMENTS = ("verify-geometry", "audit-model", "single-site", "sweep-decay", "inequality",
               "lsi-scan", "telescoping")
INEQUALITIES = ("ubound", "poincare", "weak-lsi", "sweep-contraction", "sqrt-sweep", "covariance",
                "qn-decay", "global-lsi", "tail-bound")

OPTION_KEYS = {
    "verify-geometry": {"n_points": int, "sample_seed": int},
    "audit-model": {"n_points": int},
    "single-site": {"n_functions": int},
    "sweep-decay": {"n_max": int, "n_pairs": int, "method": str, "site": list},
    "inequality": {"level": str, "boundaries": list, "site": list, "n_max": int, "n_pairs": int,
                   "method": str, "compare_width": int},
    "lsi-scan": {"deltas": list},
    "telescoping": {"n_max": int},
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclasses.dataclass(frozen=True)
class Emit:
    csv: bool = True
    json: bool = True
    svg: bool = False


@dataclasses.dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    chain: ChainSpec
    grid: GridSpec
    experiment: str
    output_dir: Path
    emit: Emit = Emit()
    inequality: str = None
    workers: int = 1
    options: Dict[str, Any] = dataclasses.field(default_factory=dict)
    raw: Dict[str, Any] = dataclasses.field(default_factory=dict, compare=False)


def _want(tree, key, path, kind, required=False, default=None):
    if key not in tree or tree[key] is None and default is not None:
        if required:
            raise ConfigError(f"{path}{key}", "required field is missing")
        return default
    val = tree[key]
    if val is None:
        return None
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if kind is int and isinstance(val, bool) or not isinstance(val, kind):
        raise ConfigError(f"{path}{key}", f"expected {kind.__name__}, got {type(val).__name__}")
    return val


def _section(tree, key, path=""):
    sub = tree.get(key, {})
    if sub is None:
        sub = {}
    if not isinstance(sub, dict):
        raise ConfigError(f"{path}{key}", "expected a mapping")
    return sub


def _no_extra(tree, allowed, path):
    for k in tree:
        if k not in allowed:
            raise ConfigError(f"{path}{k}", "unknown field")


def _build(path, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


def parse_config(tree: Dict[str, Any], base_dir: Path = None) -> RunConfig:
    """Validate a parsed config tree; raises ConfigError naming the field."""
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _no_extra(tree, {"experiment", "inequality", "output_dir", "workers", "model", "chain", "grid", "emit",
                     "options"}, "")
    experiment = _want(tree, "experiment", "", str, required=True)
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    inequality = _want(tree, "inequality", "", str)
    if experiment == "inequality":
        if inequality is None:
            raise ConfigError("inequality", "required field is missing when experiment is 'inequality'")
        if inequality not in INEQUALITIES:
            raise ConfigError("inequality", f"must be one of {', '.join(INEQUALITIES)}")
    elif inequality is not None:
        raise ConfigError("inequality", "only allowed when experiment is 'inequality'")
    out = _want(tree, "output_dir", "", str, required=True)
    workers = _want(tree, "workers", "", int, default=1)
    if workers < 1:
        raise ConfigError("workers", "must be >= 1")

    m = _section(tree, "model")
    _no_extra(m, {"spin_space", "p", "r", "delta", "J", "strict", "lattice"}, "model.")
    space_name = _want(m, "spin_space", "model.", str, required=True)
    space = _build("model.spin_space", lambda: SpinSpace.parse(space_name))
    p = _want(m, "p", "model.", int, required=True)
    r = _want(m, "r", "model.", int, required=True)
    delta = _want(m, "delta", "model.", float, required=True)
    J = _want(m, "J", "model.", float, default=1.0)
    strict = _want(m, "strict", "model.", bool, default=True)
    lat = _section(m, "lattice", "model.")
    _no_extra(lat, {"width", "height", "boundary"}, "model.lattice.")
    width = _want(lat, "width", "model.lattice.", int, default=4)
    height = _want(lat, "height", "model.lattice.", int, default=4)
    boundary = lat.get("boundary")
    if boundary is not None:
        if isinstance(boundary, (int, float)) and not isinstance(boundary, bool):
            boundary = (float(boundary),)
        elif isinstance(boundary, list) and all(isinstance(v, (int, float)) for v in boundary):
            boundary = tuple(float(v) for v in boundary)
        else:
            raise ConfigError("model.lattice.boundary", "expected a number or a list of coordinates")
        if len(boundary) != space.dim:
            raise ConfigError("model.lattice.boundary", f"expected {space.dim} coordinate(s)")
    lattice = _build("model.lattice", lambda: LatticeSpec(width, height, boundary))
    model = _build("model", lambda: ModelParams(space, p, r, delta, J, lattice, strict))

    c = _section(tree, "chain")
    fields = {f.name: f for f in dataclasses.fields(ChainSpec)}
    _no_extra(c, set(fields), "chain.")
    kw = {}
    for k in c:
        kind = float if k == "proposal_scale" else int
        kw[k] = _want(c, k, "chain.", kind)
    chain = _build("chain", lambda: ChainSpec(**kw))

    g = _section(tree, "grid")
    _no_extra(g, {"half_width", "points_per_axis", "rule", "tail_level", "tail_tol"}, "grid.")
    gkw = {}
    for k, kind in (("half_width", float), ("points_per_axis", int), ("rule", str), ("tail_level", float),
                    ("tail_tol", float)):
        if k in g:
            gkw[k] = _want(g, k, "grid.", kind)
    if "rule" in gkw and gkw["rule"] not in RULES:
        raise ConfigError("grid.rule", f"must be one of {', '.join(RULES)}")
    grid = _build("grid", lambda: GridSpec(**gkw))

    e = _section(tree, "emit")
    _no_extra(e, {"csv", "json", "svg"}, "emit.")
    emit = Emit(**{k: _want(e, k, "emit.", bool) for k in e})

    o = _section(tree, "options")
    allowed = OPTION_KEYS[experiment]
    _no_extra(o, set(allowed), "options.")
    options = {k: _want(o, k, "options.", allowed[k]) for k in o}
    if "deltas" in options:
        ds = options["deltas"]
        if not ds or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 for v in ds):
            raise ConfigError("options.deltas", "expected a nonempty list of nonnegative numbers")
        options["deltas"] = [float(v) for v in ds]
    if "method" in options and options["method"] not in ("coupled", "replica"):
        raise ConfigError("options.method", "must be 'coupled' or 'replica'")
    if "level" in options and options["level"] not in ("site", "block"):
        raise ConfigError("options.level", "must be 'site' or 'block'")
    for k in ("site",):
        if k in options and (len(options[k]) != 2 or not all(isinstance(v, int) for v in options[k])):
            raise ConfigError(f"options.{k}", "expected [row, column]")
    if "n_max" in options and options["n_max"] < (4 if experiment != "telescoping" else 0):
        raise ConfigError("options.n_max", "too small")

    return RunConfig(model, chain, grid, experiment, resolve_output_dir(out, base_dir), emit, inequality,
                     workers, options, tree)


def resolve_output_dir(out: str, base_dir: Path = None) -> Path:
    path = Path(out)
    if path.is_absolute():
        return path
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        return Path(root) / path
    return (base_dir or Path.cwd()) / path


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return parse_config(tree if tree is not None else {}, base_dir=path.parent)
