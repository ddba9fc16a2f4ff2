"""Experiment drivers behind ``spinlsi run``.

Each driver takes a validated RunConfig and returns an :class:`Outcome`:
named tables and JSON documents plus one summary line per headline check.
The runner decides which of them to write.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List

import numpy as np

from . import audit, dynamics, geometry, inequalities as iq, model
from .config import RunConfig
from .geometry import SpinSpace
from .quadrature import SiteMeasureSpec, SiteQuadrature
from .testfunctions import (Bump, CoordBump, Shifted, SoftClip, TestFunction, block_family, pair_family,
                            single_site_family)


@dataclasses.dataclass
class Table:
    header: List[str]
    rows: List[list]


@dataclasses.dataclass
class Outcome:
    tables: Dict[str, Table] = dataclasses.field(default_factory=dict)
    documents: Dict[str, object] = dataclasses.field(default_factory=dict)
    summary: List[str] = dataclasses.field(default_factory=list)
    plots: Dict[str, dict] = dataclasses.field(default_factory=dict)
    ok: bool = True

    def add_reports(self, name, reports):
        self.documents[name] = [r.to_dict() for r in reports]
        self.tables[name] = Table(list(iq.CSV_COLUMNS), [row for r in reports for row in r.csv_rows()])
        for r in reports:
            self.summary.append(r.summary())
            self.ok &= r.verdict != iq.FAIL


def _boundary_neighbours(params):
    lat = params.lattice
    arr = lat.boundary_array(params.spin_space)
    # any boundary site of a 1x1 window; all four are the same spin when a single spin is given
    return tuple(tuple(arr[a, b]) for a, b in ((0, 1), (2, 1), (1, 0), (1, 2)))


def _site(cfg: RunConfig, default=(1, 1)):
    return tuple(cfg.options.get("site", default))


def verify_geometry(cfg: RunConfig) -> Outcome:
    space = cfg.model.spin_space
    n = cfg.options.get("n_points", 1000)
    seed = cfg.options.get("sample_seed", 0)
    pts = audit.default_sample_points(space, n=n, seed=seed)
    dist = lambda p: geometry.metric_d(p, space)  # noqa: E731
    grad = geometry.horizontal_grad(dist, pts, space)
    gnorm = np.sqrt(np.sum(grad * grad, axis=-1))
    d = dist(pts)
    rows = [list(map(float, pts[k])) + [float(d[k]), float(gnorm[k]), float(gnorm[k] - 1.0)] for k in range(n)]
    coords = [f"x{k + 1}" for k in range(space.dim)]
    out = Outcome()
    out.tables["eikonal"] = Table(coords + ["d", "grad_norm", "residual"], rows)
    rng = np.random.default_rng(seed + 1)
    a, b, c = (rng.normal(size=(200, space.dim)) for _ in range(3))
    assoc = float(np.max(np.abs(geometry.mul(geometry.mul(a, b, space), c, space)
                                - geometry.mul(a, geometry.mul(b, c, space), space))))
    inv_err = float(np.max(np.abs(geometry.mul(a, geometry.inv(a, space), space))))
    K1 = geometry.fit_laplacian_constant(pts, space)
    K2 = geometry.fit_laplacian_constant(audit.default_sample_points(space, n=n, seed=seed + 7), space)
    probe = np.array([3.0, 4.0, 0.0]) if space is SpinSpace.HEISENBERG1 else np.array([5.0])
    summary = {"max_eikonal_residual": float(np.max(np.abs(gnorm - 1.0))), "associativity_error": assoc,
               "inverse_error": inv_err, "d_probe": float(dist(probe)), "K_set1": K1["K"], "K_set2": K2["K"],
               "K_abs_set1": K1["K_abs"], "K_relative_change": abs(K1["K"] - K2["K"]) / K1["K"]}
    out.documents["geometry"] = summary
    good = summary["max_eikonal_residual"] < 1e-3 and assoc < 1e-12 and abs(summary["d_probe"] - 5.0) < 1e-6 \
        and summary["K_relative_change"] < 0.2
    out.ok = bool(good)
    out.summary.append(f"geometry: {'PASS' if good else 'FAIL'} eikonal {summary['max_eikonal_residual']:.2e}, "
                       f"K {K1['K']:.4f}/{K2['K']:.4f}")
    return out


def audit_model(cfg: RunConfig) -> Outcome:
    pts = audit.default_sample_points(cfg.model.spin_space, n=cfg.options.get("n_points", 400))
    rep = audit.audit_assumptions(cfg.model, pts)
    out = Outcome()
    out.documents["audit"] = rep.to_dict()
    out.tables["audit"] = Table(["assumption", "verdict", "margin"],
                                [[e.name, e.verdict, float(e.margin)] for e in rep.entries])
    out.summary.append(f"audit: {'PASS' if rep.passed else 'FAIL'}; failed: {rep.failed()}")
    # a failing audit is a result, not an error
    return out


def single_site(cfg: RunConfig) -> Outcome:
    """MCMC on a one-site window against one-site quadrature."""
    params = cfg.model.replace(lattice=model.LatticeSpec(1, 1, cfg.model.lattice.boundary))
    space = params.spin_space
    fam = single_site_family(space)[: cfg.options.get("n_functions", 5)]
    spec = SiteMeasureSpec(params, _boundary_neighbours(params))
    grid = iq._family_grid(fam, None if space is SpinSpace.LINE else cfg.grid,
                           64 if space is SpinSpace.LINE else cfg.grid.points_per_axis)
    q = SiteQuadrature(spec, grid)
    samples = dynamics.sample_gibbs(params, cfg.chain)
    rows = []
    ok = True
    for tf in fam:
        oracle = q.expect(tf.as_site_function()(q.points))
        m, se = samples.mean_and_stderr(tf(samples.flat))
        z = (m - oracle) / se if se > 0 else 0.0
        ok &= abs(z) <= 3.0
        rows.append([tf.name, oracle, m, se, z])
    x = lambda p: p[..., 0]  # noqa: E731
    var_oracle = q.expect(x(q.points) ** 2) - q.expect(x(q.points)) ** 2
    out = Outcome(ok=bool(ok))
    out.tables["single_site"] = Table(["function", "oracle_mean", "mcmc_mean", "mcmc_stderr", "z"], rows)
    out.documents["single_site"] = {"x1_variance_oracle": var_oracle, "acceptance": samples.acceptance,
                                    "max_abs_z": max(abs(r[-1]) for r in rows)}
    out.summary.append(f"single-site: {'PASS' if ok else 'FAIL'} max |z| = {out.documents['single_site']['max_abs_z']:.2f}")
    return out


def _starts(cfg):
    samples = dynamics.sample_gibbs(cfg.model, cfg.chain)
    return samples


def sweep_decay(cfg: RunConfig) -> Outcome:
    site = _site(cfg)
    f = TestFunction({site: Bump(cfg.model.spin_space, 0.0, 1.5)})
    samples = _starts(cfg)
    rep = iq.qn_decay(f, cfg.model, cfg.options.get("n_max", 6), samples.flat,
                      method=cfg.options.get("method", "coupled"), n_pairs=cfg.options.get("n_pairs", 8),
                      seed=cfg.chain.seed, chain=cfg.chain, nu_f=samples.mean_and_stderr(f(samples.flat))[0])
    out = Outcome()
    out.add_reports("qn_decay", [rep])
    return out


def _global(params, chain, seed):
    samples = dynamics.sample_gibbs(params, chain)
    return iq.fit_global_lsi(iq.global_family(params.spin_space, params.lattice), samples, seed=seed), samples


def inequality(cfg: RunConfig) -> Outcome:
    name = cfg.inequality
    params = cfg.model
    space = params.spin_space
    out = Outcome()
    if name == "ubound":
        spec = SiteMeasureSpec(params, _boundary_neighbours(params) if params.delta else None)
        reports = [iq.fit_ubound(single_site_family(space), spec)]
    elif name == "poincare":
        reports = [iq.fit_poincare(single_site_family(space), cfg.options.get("boundaries", [0, 1, 2, 4, 8]), params)]
    elif name in ("sweep-contraction", "sqrt-sweep"):
        level = cfg.options.get("level", "site")
        fam = pair_family(space, *iq.SITE_PAIR) if level == "site" else block_family(space, *iq.BLOCKS_2X2)
        fit = iq.fit_sweep_contraction if name == "sweep-contraction" else iq.fit_sqrt_sweep
        reports = [fit(fam, params, level=level, boundary=params.lattice.boundary)]
    elif name == "weak-lsi":
        site = _site(cfg)
        samples = dynamics.sample_gibbs(params, cfg.chain)
        reports = [iq.fit_weak_lsi(iq.weak_lsi_family(space, site), samples, site=site)]
    elif name == "covariance":
        tfs = [TestFunction({(0, 0): fac}) for fac in
               (Bump(space, 0.0, 1.5), CoordBump(space, 0, 0.0, 1.5), Bump(space, 0.5, 1.0))]
        grid = iq._family_grid(tfs, None if space is SpinSpace.LINE else cfg.grid,
                               128 if space is SpinSpace.LINE else cfg.grid.points_per_axis)
        q = SiteQuadrature(SiteMeasureSpec(params, _boundary_neighbours(params) if params.delta else None), grid)
        f, g1, g2 = (t.as_site_function() for t in tfs)
        reports = [iq.check_covariance_lemma(f, g1, quad=q), iq.check_covariance_lemma(f, g2, quad=q)]
    elif name == "qn-decay":
        return sweep_decay(cfg)
    elif name in ("global-lsi", "tail-bound"):
        rep, samples = _global(params, cfg.chain, cfg.chain.seed)
        reports = [rep]
        if name == "global-lsi" and "compare_width" in cfg.options:
            w = cfg.options["compare_width"]
            big = params.replace(lattice=model.LatticeSpec(w, w, params.lattice.boundary))
            rep2, _ = _global(big, cfg.chain, cfg.chain.seed)
            reports.append(rep2)
            stab = iq.lsi_window_stability(rep, rep2)
            out.documents["window_stability"] = stab
            out.summary.append(f"window stability: {'PASS' if stab['stable'] else 'FAIL'} "
                               f"relative change {stab['relative_change']:.3f}")
            out.ok &= stab["stable"]
        if name == "tail-bound":
            lat = params.lattice
            c = ((lat.height - 1) // 2, (lat.width - 1) // 2)
            f = TestFunction({c: SoftClip(space, 0, 2.0)})
            reports.append(iq.tail_bound_check(f, samples, rep.constants["C"]))
    else:  # pragma: no cover - the config validator restricts names
        raise ValueError(name)
    out.add_reports(name.replace("-", "_"), reports)
    return out


def _scan_point(args):
    params, chain = args
    return _global(params, chain, chain.seed)[0]


def lsi_scan(cfg: RunConfig) -> Outcome:
    deltas = cfg.options.get("deltas", list(iq.DELTA_SCAN))
    jobs = [(cfg.model.replace(delta=d), cfg.chain) for d in deltas]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(_scan_point, jobs))
    else:
        reports = [_scan_point(j) for j in jobs]
    out = Outcome()
    out.documents["lsi_scan"] = [r.to_dict() for r in reports]
    rows = [[d, r.constants["C"], r.stderr["C"], r.verdict] for d, r in zip(deltas, reports)]
    out.tables["lsi_scan"] = Table(["delta", "C", "C_stderr", "verdict"], rows)
    for d, r in zip(deltas, reports):
        out.summary.append(f"delta={d:g}: {r.summary()}")
        out.ok &= r.verdict != iq.FAIL
    out.plots["lsi_scan"] = {"x": list(deltas), "y": [r.constants["C"] for r in reports],
                             "yerr": [r.stderr["C"] for r in reports], "xlabel": "delta", "ylabel": "C"}
    return out


def telescoping(cfg: RunConfig) -> Outcome:
    params = cfg.model.replace(lattice=model.LatticeSpec(2, 2, cfg.model.lattice.boundary))
    g = TestFunction({(0, 0): Shifted(Bump(SpinSpace.LINE, 0.0, 1.5), 1.0)})
    rows = []
    worst = 0.0
    for n in range(cfg.options.get("n_max", 3) + 1):
        r = iq.check_entropy_telescoping(g, n, params)
        rows.append([n, r["residual"], r["variant_residual"]])
        worst = max(worst, r["residual"])
    out = Outcome(ok=worst <= 1e-6)
    out.tables["telescoping"] = Table(["n", "residual", "variant_residual"], rows)
    out.documents["telescoping"] = {"max_residual": worst, "delta": params.delta}
    out.summary.append(f"telescoping: {'PASS' if out.ok else 'FAIL'} max residual {worst:.2e}")
    return out


DRIVERS = {"verify-geometry": verify_geometry, "audit-model": audit_model, "single-site": single_site,
           "sweep-decay": sweep_decay, "inequality": inequality, "lsi-scan": lsi_scan,
           "telescoping": telescoping}
