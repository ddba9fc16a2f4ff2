"""Numerical fits of the coercive inequalities over families of test functions.

Every fit returns a :class:`FitReport`. Oracle fits (one-site and tiny
lattice quadrature) carry zero standard error; sample based fits carry
between-chain standard errors. The exact sweep-out entropy identity is
checked by :func:`check_entropy_telescoping`.

Two-sided fits ``LHS <= c1 * A + c2 * B`` (``A`` the primary Dirichlet term,
``B`` the secondary one) are solved in closed form: for two unknowns the
lexicographic program "minimise c2, then c1" has an explicit solution, so no
LP solver is needed.
"""
from __future__ import annotations

import dataclasses
import json
import math
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import xlogy

from . import dynamics, geometry, model
from .estimators import bootstrap, jackknife, plugin_entropy, ratio_stderr
from .geometry import SpinSpace
from .io import atomic_write_csv, atomic_write_text
from .model import ModelParams
from .quadrature import (GridSpec, QuadratureError, SiteMeasureSpec, SiteQuadrature, TinyLattice,
                         tensor_nodes)
from .testfunctions import Bump, CoordBump, Shifted, SoftClip, TestFunction

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"
STDERR_LIMIT = 0.25
DELTA_SCAN = (0.0, 0.01, 0.02, 0.05, 0.1, 0.2)
CSV_COLUMNS = ("inequality", "delta", "function", "lhs", "primary", "secondary", "ratio",
               "ratio_stderr", "included")
_DEGENERATE = 1e-12


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclasses.dataclass
class FitReport:
    """Fitted constants, per-function table and verdict of one inequality."""

    inequality: str
    constants: Dict[str, float]
    rows: List[dict]
    stderr: Dict[str, float]
    verdict: str
    criterion: str
    delta: Optional[float] = None
    diagnostics: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        bad = [r["function"] for r in self.rows if r.get("included", True) and _noisy(r)]
        if bad and self.verdict != INCONCLUSIVE:
            self.diagnostics["verdict_before_stderr_rule"] = self.verdict
            self.verdict = INCONCLUSIVE
            self.criterion += f"; ratio stderr above {STDERR_LIMIT:.0%} for {len(bad)} function(s)"
            self.diagnostics["noisy_functions"] = bad

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return _clean(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self):
        out = []
        for r in self.rows:
            out.append([self.inequality, "" if self.delta is None else self.delta]
                       + [r.get(k, "") for k in CSV_COLUMNS[2:]])
        return out

    def summary(self) -> str:
        consts = ", ".join(f"{k}={v:.6g}" for k, v in self.constants.items())
        return f"{self.inequality}: {self.verdict} ({consts}) [{self.criterion}]"


def _noisy(row) -> bool:
    r, se = row.get("ratio"), row.get("ratio_stderr")
    if not isinstance(r, (float, int)) or not isinstance(se, (float, int)):
        return False
    if not np.isfinite(r) or r == 0:
        return False
    if not np.isfinite(se):
        return True
    return se > STDERR_LIMIT * abs(r)


def write_reports(reports: Sequence[FitReport], json_path=None, csv_path=None):
    if json_path is not None:
        text = json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)
        atomic_write_text(json_path, text + "\n")
    if csv_path is not None:
        rows = [row for r in reports for row in r.csv_rows()]
        atomic_write_csv(csv_path, CSV_COLUMNS, rows)


# ---------------------------------------------------------------- helpers


def two_sided_fit(lhs, A, B, c1_cap=None):
    """Lexicographic fit of ``lhs <= c1 A + c2 B``: least ``c2``, then least ``c1``.

    Rows with ``A == 0`` pin ``c2``; with a cap on ``c1`` every row does.
    Returns ``(c1, c2)``; ``inf`` when no finite pair is feasible.
    """
    lhs, A, B = (np.asarray(v, dtype=float) for v in (lhs, A, B))
    cap = math.inf if c1_cap is None else float(c1_cap)
    if np.any((A <= 0) & (B <= 0) & (lhs > 0)):
        return math.inf, math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(A > 0, lhs - cap * A, lhs) if np.isfinite(cap) else np.where(A > 0, -np.inf, lhs)
        # rows sitting exactly on the cap leave rounding-level residue
        need = np.where(need <= 1e-12 * np.abs(lhs), 0.0, need)
        c2_rows = np.where(B > 0, np.maximum(need, 0.0) / B, np.where(need > 0, np.inf, 0.0))
    c2 = float(np.max(c2_rows, initial=0.0))
    if not np.isfinite(c2):
        return math.inf, math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        rest = lhs - c2 * B
        c1_rows = np.where(A > 0, np.maximum(rest, 0.0) / A, 0.0)
    c1 = float(np.max(c1_rows, initial=0.0))
    return c1, c2


def _ratio(num, den, scale):
    """``num / den`` with the degeneracy rule: both sides negligible -> excluded (nan)."""
    if den <= _DEGENERATE * scale:
        if abs(num) <= _DEGENERATE * scale:
            return math.nan
        return math.inf
    return num / den


def _family_grid(family, grid: Optional[GridSpec], points_per_axis=64) -> GridSpec:
    if grid is not None:
        return grid
    edges = sorted({e for f in family for e in f.breakpoints()})
    # at least eight nodes on every panel of the half axis
    m = max(points_per_axis, 16 * (len(edges) + 1))
    return GridSpec(points_per_axis=m, breakpoints=tuple(edges))


def _boundary_spins(value, space: SpinSpace):
    """A boundary given as a distance (all four neighbours at that point) or as four spins."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        pt = np.zeros(space.dim)
        pt[0] = float(arr)
        return tuple(tuple(pt) for _ in range(4))
    arr = geometry.as_points(arr, space).reshape(-1, space.dim)
    if len(arr) == 1:
        return tuple(tuple(arr[0]) for _ in range(4))
    return tuple(map(tuple, arr))


# ---------------------------------------------------------- one-site fits


def fit_ubound(family: Sequence[TestFunction], spec: SiteMeasureSpec, grid: GridSpec = None) -> FitReport:
    """Smallest ``C0`` with ``E w f^2 <= C0 (E|grad f|^2 + E f^2)`` for ``w = d^r`` and ``w = H``."""
    params = spec.params
    if params.r > params.p:
        raise ValueError("the U-bound fit needs r <= p")
    grid = _family_grid(family, grid)
    q = SiteQuadrature(spec, grid)
    space = params.spin_space
    d = geometry.metric_d(q.points, space)
    dr = model._ipow(d, params.r)
    rows = []
    for tf in family:
        f = tf.as_site_function()
        v = f(q.points)
        g = f.grad(q.points)
        mass = q.expect(v * v)
        dir_ = q.expect(np.sum(g * g, axis=-1))
        lhs_d = q.expect(dr * v * v)
        lhs_h = q.expect(q.energy * v * v)
        den = dir_ + mass
        scale = max(mass, 1e-300)
        rows.append({"function": tf.name, "lhs": lhs_d, "lhs_H": lhs_h, "primary": dir_, "secondary": mass,
                     "ratio": _ratio(lhs_d, den, scale), "ratio_H": _ratio(lhs_h, den, scale),
                     "ratio_stderr": 0.0})
    for r in rows:
        r["included"] = bool(np.isfinite(r["ratio"]))
    ratios = [r["ratio"] for r in rows if r["included"]]
    ratios_h = [r["ratio_H"] for r in rows if r["included"]]
    if not ratios or max(ratios) <= 0:
        raise ValueError("degenerate family: every U-bound ratio is zero")
    c0 = max(ratios)
    c0h = max(ratios_h)
    ok = np.isfinite(c0) and np.isfinite(c0h)
    return FitReport("ubound", {"C0_dr": c0, "C0_H": c0h}, rows, {"C0_dr": 0.0, "C0_H": 0.0},
                     PASS if ok else FAIL, "finite C0 for both weights", params.delta,
                     {"points_per_axis": grid.points_per_axis, "tail_mass": q.tail_mass})


def fit_poincare(family: Sequence[TestFunction], boundary_set, params: ModelParams,
                 grid: GridSpec = None) -> FitReport:
    """``c_p`` for each boundary condition and the max over them.

    ``boundary_set`` holds at least five boundaries; each is a distance
    (all four neighbours put at that point on the first axis) or four spins.
    """
    boundary_set = list(boundary_set)
    if len(boundary_set) < 5:
        raise ValueError("fit_poincare needs at least five boundary conditions")
    grid = _family_grid(family, grid)
    rows = []
    per_boundary = []
    for bnd in boundary_set:
        spec = SiteMeasureSpec(params, _boundary_spins(bnd, params.spin_space))
        q = SiteQuadrature(spec, grid)
        best = 0.0
        for tf in family:
            f = tf.as_site_function()
            v = f(q.points)
            g = f.grad(q.points)
            mean = q.expect(v)
            var = q.expect((v - mean) ** 2)
            dir_ = q.expect(np.sum(g * g, axis=-1))
            ratio = _ratio(var, dir_, max(q.expect(v * v), 1e-300))
            inc = bool(np.isfinite(ratio))
            rows.append({"function": f"{tf.name}|omega={bnd}", "lhs": var, "primary": dir_, "secondary": "",
                         "ratio": ratio, "ratio_stderr": 0.0, "included": inc})
            if inc:
                best = max(best, ratio)
        per_boundary.append(best)
    cp = max(per_boundary)
    lo = min(per_boundary)
    uniformity = cp / lo if lo > 0 else math.inf
    return FitReport("poincare", {"c_p": cp}, rows, {"c_p": 0.0}, PASS if np.isfinite(cp) else FAIL,
                     "finite c_p, max over boundaries", params.delta,
                     {"per_boundary": per_boundary, "boundaries": [str(b) for b in boundary_set],
                      "uniformity": uniformity})


def check_covariance_lemma(f, g, quad: SiteQuadrature = None, samples=None, n_blocks: int = 16) -> FitReport:
    """``cov(f^2, g)^2 <= 8 mu(f^2) mu[(f - mu f)^2 (g^2 + mu g^2)]``.

    ``f`` and ``g`` map points (N, dim) to values. Give either a quadrature
    rule (oracle, zero stderr) or equilibrium ``samples`` (N, dim), in which
    case blocks of consecutive samples give a jackknife stderr.
    """
    if (quad is None) == (samples is None):
        raise ValueError("give exactly one of quad or samples")

    def sides(fv, gv, w):
        E = lambda a: float(np.dot(w, a))  # noqa: E731
        mf, mg = E(fv), E(gv)
        f2 = fv * fv
        cov = E(f2 * gv) - E(f2) * mg
        lhs = cov * cov
        rhs = 8.0 * E(f2) * E((fv - mf) ** 2 * (gv * gv + E(gv * gv)))
        return lhs, rhs

    def size(fv, gv, w):
        # natural scale of cov(f^2, g)^2, for the rounding floor
        return float(np.dot(w, fv * fv)) ** 2 * float(np.dot(w, gv * gv))

    if quad is not None:
        fv, gv = np.asarray(f(quad.points), float), np.asarray(g(quad.points), float)
        lhs, rhs = sides(fv, gv, quad.prob)
        scale = size(fv, gv, quad.prob)
        se = 0.0
    else:
        pts = np.asarray(samples, dtype=float)
        fv, gv = np.asarray(f(pts), float), np.asarray(g(pts), float)
        n = len(fv) // n_blocks * n_blocks
        fv, gv = fv[:n], gv[:n]
        lhs, rhs = sides(fv, gv, np.full(n, 1.0 / n))
        scale = size(fv, gv, np.full(n, 1.0 / n))
        blocks = np.stack([fv, gv], axis=-1).reshape(n_blocks, -1, 2)

        def gap(b):
            flat = b.reshape(-1, 2)
            a, c = sides(flat[:, 0], flat[:, 1], np.full(len(flat), 1.0 / len(flat)))
            return a - c

        _, se = jackknife(gap, blocks)
    ok = lhs <= rhs + 3.0 * se + _DEGENERATE * scale
    row = {"function": f"{getattr(f, 'name', 'f')},{getattr(g, 'name', 'g')}", "lhs": lhs, "primary": rhs,
           "secondary": "", "ratio": lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf),
           "ratio_stderr": "", "included": True}
    return FitReport("covariance_lemma", {"lhs": lhs, "rhs": rhs, "slack": rhs - lhs}, [row],
                     {"lhs_minus_rhs": se}, PASS if ok else FAIL, "LHS <= RHS + 3 stderr")


# ------------------------------------------------------ tiny-lattice fits

SITE_PAIR = ((0, 0), (0, 1))
BLOCKS_2X2 = (((0, 0), (1, 1)), ((0, 1), (1, 0)))


def _tiny(params: ModelParams, lattice, family, grid):
    if params.spin_space is not SpinSpace.LINE:
        if lattice.n_sites > 2:
            raise QuadratureError("H1 windows above two sites are beyond the quadrature budget; use MCMC")
        raise QuadratureError("the tiny-lattice quadrature backend supports line spins only")
    return TinyLattice(params, _family_grid(family, grid, points_per_axis=64 if lattice.n_sites <= 2 else 48),
                       lattice)


def _fd_block_derivative(tl: TinyLattice, inner: Callable, block, outer, h):
    """``nu( sum_{s in outer} (d_s inner(x_outer))^2 )`` where ``inner`` maps rest dicts to (N,)."""
    coords, w = tl.marginal(outer)
    total = 0.0
    for k, s in enumerate(outer):
        plus = {t: coords[:, j] + (h if j == k else 0.0) for j, t in enumerate(outer)}
        minus = {t: coords[:, j] - (h if j == k else 0.0) for j, t in enumerate(outer)}
        der = (inner(plus) - inner(minus)) / (2.0 * h)
        total += float(np.dot(w, der * der))
    return total


def _dirichlet_on(tl: TinyLattice, tf: TestFunction, sites):
    get = tl.grid_get()
    total = 0.0
    for s in sites:
        g = np.broadcast_to(tf.site_gradient_sites(get, s)[..., 0], tl.shape)
        total += tl.mean(g * g)
    return total


def _sweep_type_fit(name, family, params, level, grid, h, composite, boundary, labels):
    # inner_block is integrated out, the derivative is taken along outer_block
    if level == "site":
        lattice = model.LatticeSpec(2, 1, boundary=boundary)
        i, j = SITE_PAIR
        inner_block, outer_block = ([i], [j]) if composite == "plain" else ([j], [i])
    elif level == "block":
        lattice = model.LatticeSpec(2, 2, boundary=boundary)
        inner_block, outer_block = list(BLOCKS_2X2[1]), list(BLOCKS_2X2[0])
    else:
        raise ValueError("level must be 'site' or 'block'")
    tl = _tiny(params, lattice, family, grid)
    lhs, A, B, rows = [], [], [], []
    for tf in family:
        if composite == "plain":
            inner = lambda rest, tf=tf: tl.cond_expect_at(tf.evaluate_sites, inner_block, rest)  # noqa: E731
        else:
            sq = lambda get, tf=tf: tf.evaluate_sites(get) ** 2  # noqa: E731
            inner = lambda rest, sq=sq: np.sqrt(np.maximum(tl.cond_expect_at(sq, inner_block, rest), 0.0))  # noqa: E731
        left = _fd_block_derivative(tl, inner, inner_block, outer_block, h)
        a = _dirichlet_on(tl, tf, outer_block)
        b = _dirichlet_on(tl, tf, inner_block)
        mass = tl.mean(tl.values(tf.evaluate_sites) ** 2)
        lhs.append(left)
        A.append(a)
        B.append(b)
        rows.append({"function": tf.name, "lhs": left, "primary": a, "secondary": b, "mass": mass})
    lhs, A, B = np.array(lhs), np.array(A), np.array(B)
    scale = np.array([r["mass"] for r in rows])
    # gradients are analytic, so exact zeros are exact; FD noise in lhs is far below this floor
    A = np.where(A <= _DEGENERATE * scale, 0.0, A)
    B = np.where(B <= _DEGENERATE * scale, 0.0, B)
    keep = ~((A == 0) & (B == 0) & (lhs <= _DEGENERATE * np.maximum(scale, 1e-300)))
    c1, c2 = two_sided_fit(lhs[keep], A[keep], B[keep])
    for r, l, a, b, k in zip(rows, lhs, A, B, keep):
        den = c1 * a + c2 * b
        r["ratio"] = l / den if (k and den > 0) else (math.nan if not k else math.inf)
        r["ratio_stderr"] = 0.0
        r["included"] = bool(k)
    k1, k2 = labels[level]
    ok = np.isfinite(c1) and c2 < 1.0
    return FitReport(f"{name}_{level}", {k1: c1, k2: c2}, rows, {k1: 0.0, k2: 0.0}, PASS if ok else FAIL,
                     f"{k2} < 1", params.delta,
                     {"points_per_axis": tl.grid.points_per_axis, "fd_step": h,
                      "inner_block": [list(s) for s in inner_block],
                      "outer_block": [list(s) for s in outer_block]})


def fit_sweep_contraction(family: Sequence[TestFunction], params: ModelParams, level: str = "site",
                          boundary=None, grid: GridSpec = None, h: float = 1e-4) -> FitReport:
    """``nu|grad_j E^i f|^2 <= D1 nu|grad_j f|^2 + D2 nu|grad_i f|^2`` (site level,
    ``i = (0,0)``, ``j = (0,1)`` of a 1x2 window) or its checkerboard block
    version on a 2x2 window (``j -> Gamma_0``, ``i -> Gamma_1``). The outer
    derivative is a central difference in the conditioning spins.
    """
    return _sweep_type_fit("sweep_contraction", family, params, level, grid, h, "plain", boundary,
                           {"site": ("D1", "D2"), "block": ("R1", "R2")})


def fit_sqrt_sweep(family: Sequence[TestFunction], params: ModelParams, level: str = "site",
                   boundary=None, grid: GridSpec = None, h: float = 1e-4) -> FitReport:
    """``nu|grad_i sqrt(E^j f^2)|^2 <= G1 nu|grad_i f|^2 + G2 nu|grad_j f|^2`` with
    ``i = (0,0)``, ``j = (0,1)``; block version on 2x2 with constants C1, C2.
    """
    return _sweep_type_fit("sqrt_sweep", family, params, level, grid, h, "sqrt", boundary,
                           {"site": ("G1", "G2"), "block": ("C1", "C2")})


def check_entropy_telescoping(g, n: int, params: ModelParams, grid: GridSpec = None,
                              lattice: model.LatticeSpec = None) -> dict:
    """Sweep-out entropy identity on a tiny line lattice, every term by quadrature.

    ``Q^n lambda(g) = sum_{m<n} T_n...T_{m+2}[Ent_{T_{m+1}}(Q^m g)] + lambda(Q^n g)``
    with ``T_k = E^{Gamma_0}`` for odd ``k``. Returns the sup-norm residual of
    this identity and of the variant that pairs odd ``m`` with
    ``E^{Gamma_1} Ent_{Gamma_0}`` and even ``m`` with ``Ent_{Gamma_1}``.
    ``g`` is a get-callable or TestFunction and must be strictly positive.
    """
    lattice = lattice if lattice is not None else model.LatticeSpec(2, 2)
    if n < 0:
        raise ValueError("n must be >= 0")
    fam = [g] if isinstance(g, TestFunction) else []
    tl = _tiny(params, lattice, fam, grid if grid is not None else (None if fam else GridSpec(points_per_axis=32)))
    G = tl.values(g.evaluate_sites if isinstance(g, TestFunction) else g)
    if not np.all(G > 0):
        raise ValueError("g must be strictly positive on the grid")
    blocks = {0: lattice.parity_sites(0), 1: lattice.parity_sites(1)}
    T = lambda k, F: tl.cond(F, blocks[dynamics.operator_parity(k)])  # noqa: E731
    lam = lambda F: xlogy(F, F)  # noqa: E731

    def Q(k, F):
        for j in range(1, k + 1):
            F = T(j, F)
        return F

    Qm = [G]
    for k in range(1, n + 1):
        Qm.append(T(k, Qm[-1]))
    lhs = Q(n, lam(G))
    rhs = lam(Qm[n])
    for m in range(n):
        term = T(m + 1, lam(Qm[m])) - lam(T(m + 1, Qm[m]))
        for k in range(m + 2, n + 1):
            term = T(k, term)
        rhs = rhs + term
    alt = lam(Qm[n])
    for m in range(n):
        if m % 2:
            term = tl.cond(tl.cond(lam(Qm[m]), blocks[0]) - lam(tl.cond(Qm[m], blocks[0])), blocks[1])
        else:
            term = tl.cond(lam(Qm[m]), blocks[1]) - lam(tl.cond(Qm[m], blocks[1]))
        alt = alt + Q(n - m - 1, term)
    return {"n": n, "residual": float(np.max(np.abs(lhs - rhs))),
            "variant_residual": float(np.max(np.abs(lhs - alt))),
            "lhs_mean": tl.mean(lhs), "scale": float(np.max(np.abs(lhs)))}


# ------------------------------------------------------- sample-based fits


def _with_site_restrictions(family, site):
    """Add the one-site restriction of every member that depends on ``site``."""
    out = list(family)
    names = {tf.name for tf in out}
    for tf in family:
        if tf.depends_on(site) and len(tf.factors) > 1:
            r = TestFunction({site: tf.factors[site]})
            if r.name not in names:
                out.append(r)
                names.add(r.name)
    return out


def weak_lsi_family(space: SpinSpace, site=(1, 1), far=(3, 3)):
    """Pair functions of ``site`` and one neighbour, plus members far from ``site``."""
    from .testfunctions import pair_family

    fam = pair_family(space, site, (site[0], site[1] + 1))
    fam += [TestFunction({(site[0] + 1, site[1]): CoordBump(space, 0, 0.0, 2.0), site: Bump(space, 0.0, 2.0)}),
            TestFunction({far: Bump(space, 0.0, 1.5)})]
    return fam


def fit_weak_lsi(family: Sequence[TestFunction], samples: dynamics.GibbsSamples, site=(1, 1),
                 grid: GridSpec = None) -> FitReport:
    """``nu Ent_{E^i}(f^2) <= c1 nu|grad_i f|^2 + c2 sum_{j~i} nu|grad_j f|^2``.

    Outer expectations over ``nu`` use the equilibrium samples; every inner
    integral over ``x_i`` (the conditional entropy and both Dirichlet terms)
    is one-site quadrature at the sampled neighbours. ``c1`` is capped at the
    largest one-site ratio over the family's own ``x_i`` factors, which are
    added as members; without a cap the fit is degenerate (``c2 = 0``).
    """
    params = samples.params
    space = params.spin_space
    lattice = params.lattice
    if not lattice.is_interior(site):
        raise IndexError(f"site {site} is outside the window")
    fam = _with_site_restrictions(family, site)
    grid = _family_grid(fam, grid)
    y, wy = tensor_nodes(space, grid, params.p)
    spins = samples.flat
    n_s, n_c = samples.spins.shape[:2]
    dist = model.distance_field(spins, space)
    a, b = site
    dn = np.stack([dist[:, a + 1 + da, b + 1 + db] for da, db in model.NEIGHBOURS], axis=-1)
    E = model.site_energy_from_distances(geometry.metric_d(y, space)[None, :], dn[:, None, :], params)
    logw = np.log(wy)[None, :] - E
    logw -= logw.max(axis=1, keepdims=True)
    P = np.exp(logw)
    P /= P.sum(axis=1, keepdims=True)
    neighbours = [(a + da, b + db) for da, db in model.NEIGHBOURS if lattice.is_interior((a + da, b + db))]

    def get(s):
        if s == site:
            return y[None, :, :]
        return spins[:, None, s[0] + 1, s[1] + 1, :]

    per_chain = {"lhs": [], "A": [], "B": [], "mass": []}
    for tf in fam:
        F = np.broadcast_to(tf.evaluate_sites(get), P.shape)
        F2 = F * F
        m2 = np.sum(P * F2, axis=1)
        if tf.depends_on(site):
            ent = np.sum(P * xlogy(F2, F2), axis=1) - xlogy(m2, m2)
        else:
            ent = np.zeros(len(spins))  # f^2 is constant in x_i
        gi = tf.site_gradient_sites(get, site)
        Ai = np.sum(P * np.broadcast_to(np.sum(gi * gi, axis=-1), P.shape), axis=1)
        Bi = np.zeros(len(spins))
        for j in neighbours:
            if j in tf.factors:
                gj = tf.site_gradient_sites(get, j)
                Bi += np.sum(P * np.broadcast_to(np.sum(gj * gj, axis=-1), P.shape), axis=1)
        for key, v in (("lhs", ent), ("A", Ai), ("B", Bi), ("mass", m2)):
            per_chain[key].append(v.reshape(n_s, n_c).mean(axis=0))
    PC = {k: np.array(v) for k, v in per_chain.items()}  # (n_fun, n_chains)
    site_only = np.array([set(tf.factors) == {site} for tf in fam])

    def fit(cols):
        lhs, A, B, mass = (PC[k][:, cols].mean(axis=1) for k in ("lhs", "A", "B", "mass"))
        A = np.where(A <= _DEGENERATE * mass, 0.0, A)
        B = np.where(B <= _DEGENERATE * mass, 0.0, B)
        with np.errstate(divide="ignore", invalid="ignore"):
            cap_rows = np.where(site_only & (A > 0), lhs / A, 0.0)
        cap = float(np.max(cap_rows, initial=0.0))
        return two_sided_fit(lhs, A, B, c1_cap=cap), (lhs, A, B)

    all_cols = np.arange(n_c)
    (c1, c2), (lhs, A, B) = fit(all_cols)
    loo = np.array([fit(np.delete(all_cols, k))[0] for k in range(n_c)])
    jk = lambda v: math.sqrt((n_c - 1) / n_c * np.sum((v - v.mean()) ** 2))  # noqa: E731
    se1, se2 = jk(loo[:, 0]), jk(loo[:, 1])
    rows = []
    for k, tf in enumerate(fam):
        den_c = c1 * PC["A"][k] + c2 * PC["B"][k]
        den = c1 * A[k] + c2 * B[k]
        inc = bool(den > 0 or lhs[k] > 0)
        ratio = lhs[k] / den if den > 0 else (math.inf if lhs[k] > 0 else math.nan)
        se = ratio_stderr(PC["lhs"][k], den_c) if den > 0 else math.nan
        rows.append({"function": tf.name, "lhs": float(lhs[k]), "primary": float(A[k]),
                     "secondary": float(B[k]), "ratio": ratio, "ratio_stderr": se,
                     "included": inc and np.isfinite(ratio)})
    ok = c2 < 1.0
    return FitReport("weak_lsi", {"c1": c1, "c2": c2}, rows, {"c1": se1, "c2": se2}, PASS if ok else FAIL,
                     "c2 < 1", params.delta,
                     {"site": list(site), "n_samples": int(n_s), "n_chains": int(n_c),
                      "c1_cap_from_site_only_members": True, "points_per_axis": grid.points_per_axis})


def global_family(space: SpinSpace, lattice: model.LatticeSpec):
    """Members centred on the window: one-site, neighbour pairs, plaquettes and
    smooth bounded non-compact members; 20 in total."""
    c = ((lattice.height - 1) // 2, (lattice.width - 1) // 2)
    e = (c[0], c[1] + 1)
    s = (c[0] + 1, c[1])
    d = (c[0] + 1, c[1] + 1)
    B = lambda a, w: Bump(space, a, w)  # noqa: E731
    C = lambda k, w: CoordBump(space, k, 0.0, w)  # noqa: E731
    plaq = (c, e, s, d)
    fam = [
        TestFunction({c: B(0.0, 2.0)}), TestFunction({c: B(0.0, 3.0)}), TestFunction({c: C(0, 2.5)}),
        TestFunction({c: Shifted(B(0.0, 2.0), 0.5)}), TestFunction({c: Shifted(C(0, 3.0), 0.5)}),
        TestFunction({c: B(0.0, 2.0), e: B(0.0, 2.0)}), TestFunction({c: C(0, 2.5), e: C(0, 2.5)}),
        TestFunction({c: Shifted(C(0, 3.0), 0.5), e: Shifted(C(0, 3.0), 0.5)}),
        TestFunction({c: B(0.0, 2.5), s: C(0, 3.0)}),
        TestFunction({t: B(0.0, 2.5) for t in plaq}), TestFunction({t: Shifted(B(0.0, 2.0), 0.5) for t in plaq}),
        TestFunction({t: Shifted(C(0, 3.0), 0.5) for t in plaq}),
        TestFunction({c: Shifted(SoftClip(space, 0, 1.0), 1.5)}),
        TestFunction({c: Shifted(SoftClip(space, 0, 1.0), 1.5), e: Shifted(SoftClip(space, 0, 1.0), 1.5)}),
        TestFunction({t: Shifted(SoftClip(space, 0, 1.0), 1.5) for t in plaq}),
        TestFunction({c: Shifted(SoftClip(space, 0, 0.5), 0.8)}),
        TestFunction({c: B(0.5, 1.5)}), TestFunction({d: C(0, 2.0), c: B(0.0, 3.0)}),
    ]
    if space is SpinSpace.HEISENBERG1:
        fam += [TestFunction({c: C(1, 2.5)}), TestFunction({c: Shifted(C(2, 2.0), 0.5)})]
    else:
        fam += [TestFunction({c: C(0, 1.5)}), TestFunction({e: Shifted(B(0.0, 1.5), 0.3)})]
    return fam


def _lsi_terms(tf: TestFunction, samples: dynamics.GibbsSamples):
    spins = samples.flat
    v = tf(spins)
    grad = tf.grad_norm_sq(spins)
    n_s, n_c = samples.spins.shape[:2]
    return (v * v).reshape(n_s, n_c).T, np.broadcast_to(grad, v.shape).reshape(n_s, n_c).T


def fit_global_lsi(family: Sequence[TestFunction], samples: dynamics.GibbsSamples, n_boot: int = 200,
                   seed: int = None) -> FitReport:
    """``C = sup_f Ent(f^2) / nu|grad f|^2`` on equilibrium samples.

    Entropies use the plug-in estimator with a jackknife over chains; the
    stderr of ``C`` is a bootstrap over chains of the whole sup.
    """
    seed = samples.chain.seed if seed is None else seed
    blocks = []
    rows = []
    for tf in family:
        f2, g2 = _lsi_terms(tf, samples)
        blocks.append(np.stack([f2, g2], axis=-1))  # (n_chains, n_samples, 2)
    blocks = np.stack(blocks, axis=1)  # (n_chains, n_fun, n_samples, 2)

    def ratios(b):
        f2 = b[..., 0].transpose(1, 0, 2).reshape(b.shape[1], -1)
        g2 = b[..., 1].transpose(1, 0, 2).reshape(b.shape[1], -1)
        out = np.empty(len(f2))
        for k in range(len(f2)):
            den = g2[k].mean()
            num = plugin_entropy(f2[k])
            out[k] = _ratio(num, den, max(f2[k].mean(), 1e-300))
        return out

    def sup(b):
        r = ratios(b)
        return float(np.nanmax(r)) if np.any(np.isfinite(r)) else math.nan

    raw = ratios(blocks)
    for k, tf in enumerate(family):
        sub = blocks[:, k:k + 1]
        if np.isfinite(raw[k]):
            est, se = jackknife(lambda b: ratios(b)[0], sub)
        else:
            est, se = raw[k], math.nan
        rows.append({"function": tf.name, "lhs": plugin_entropy(sub[..., 0].reshape(-1)),
                     "primary": float(sub[..., 1].mean()), "secondary": "", "ratio": est,
                     "ratio_stderr": se, "included": bool(np.isfinite(raw[k]))})
    inc = [r["ratio"] for r in rows if r["included"]]
    C = max(inc) if inc else math.nan
    se_boot, _ = bootstrap(sup, blocks, n_boot=n_boot, seed=seed)
    ok = bool(np.isfinite(C) and C > 0)
    report = FitReport("global_lsi", {"C": C}, rows, {"C": se_boot}, PASS if ok else FAIL, "finite C", samples.params.delta,
                       {"window": [samples.params.lattice.height, samples.params.lattice.width],
                        "argmax": rows[int(np.nanargmax([r["ratio"] if r["included"] else np.nan for r in rows]))]["function"] if inc else None,
                        "bootstrap_replicates": n_boot, "acceptance": samples.acceptance})
    if ok and not se_boot < STDERR_LIMIT * C:
        report.verdict = INCONCLUSIVE
        report.criterion += f"; bootstrap stderr above {STDERR_LIMIT:.0%}"
    return report


def lsi_window_stability(small: FitReport, large: FitReport, tol: float = 0.5) -> dict:
    a, b = small.constants["C"], large.constants["C"]
    rel = abs(a - b) / a if a > 0 else math.inf
    return {"C_small": a, "C_large": b, "relative_change": rel, "stable": bool(rel <= tol)}


def tail_bound_check(f: TestFunction, samples: dynamics.GibbsSamples, C: float,
                     h_factors=(0.5, 1.0, 2.0), lipschitz_tol: float = 1e-9) -> FitReport:
    """Empirical ``P(|f - nu f| >= h)`` against ``2 exp(-h^2 / C)``.

    ``f`` must satisfy ``|grad f| <= 1`` on the samples (checked). The
    stderr of each tail probability is between chains.
    """
    spins = samples.flat
    grad = np.sqrt(np.max(f.grad_norm_sq(spins)))
    if grad > 1.0 + lipschitz_tol:
        raise ValueError(f"f is not 1-Lipschitz on the samples (max |grad f| = {grad:.6g})")
    v = f(spins)
    mean = float(v.mean())
    std = float(v.std())
    rows = []
    ok = True
    for k in h_factors:
        h = k * std
        ind = (np.abs(v - mean) >= h).astype(float)
        p, se = samples.mean_and_stderr(ind)
        bound = 2.0 * math.exp(-h * h / C) if C > 0 else 2.0
        good = p <= bound + 3.0 * se
        ok &= bool(good)
        rows.append({"function": f"{f.name}|h={k:g}std", "lhs": p, "primary": bound, "secondary": h,
                     "ratio": p / bound, "ratio_stderr": se / bound, "included": True, "pass": bool(good)})
    tails = [r["lhs"] for r in rows]
    monotone = all(x >= y for x, y in zip(tails, tails[1:]))
    report = FitReport("tail_bound", {"C": C, "std": std, "max_grad": float(grad)}, rows, {},
                       PASS if ok else FAIL, "tail <= 2 exp(-h^2/C) + 3 stderr at every h", samples.params.delta,
                       {"monotone_in_h": monotone})
    return report


# ----------------------------------------------------------- sweep decay


def _split_half(d):
    h = d.shape[1] // 2
    return d[:, :h].mean(axis=1) * d[:, h:2 * h].mean(axis=1)


def qn_decay(f, params: ModelParams, n_max: int, starts, method: str = "coupled", n_pairs: int = 8,
             seed: int = 0, chain: dynamics.ChainSpec = None, nu_f: float = None) -> FitReport:
    """Geometric decay of ``a_n = nu[(Q^n f - Q^{n+1} f)^2]`` for ``n = 0..n_max``.

    ``starts`` are equilibrium configurations (N, H+2, W+2, dim). With
    ``method="coupled"`` (line spins) both sweeps are exact block
    resamplings sharing their uniforms; with ``"replica"`` they are
    Metropolis block updates from ``chain``. The product of two independent
    half-means gives an unbiased estimate of each squared difference.
    """
    if n_max < 4:
        raise ValueError("n_max must be >= 4")
    starts = np.asarray(starts, dtype=float)
    if n_pairs < 2:
        raise ValueError("n_pairs must be >= 2")
    a, se, q_last = [], [], None
    if method == "coupled":
        for n in range(n_max + 1):
            fx, fy = dynamics.coupled_qn_pairs(f, starts, n, params, seed, n_pairs)
            est = _split_half(fx - fy)
            a.append(float(est.mean()))
            se.append(float(est.std(ddof=1) / math.sqrt(len(est))))
            if n == n_max:
                q_last = fx.mean(axis=1)
    elif method == "replica":
        if chain is None:
            raise ValueError("the replica method needs a ChainSpec")
        traj = dynamics.qn_trajectories(f, starts, n_max + 1, params, chain, n_pairs)
        for n in range(n_max + 1):
            est = _split_half(traj[n] - traj[n + 1])
            a.append(float(est.mean()))
            se.append(float(est.std(ddof=1) / math.sqrt(len(est))))
        q_last = traj[n_max].mean(axis=1)
    else:
        raise ValueError("method must be 'coupled' or 'replica'")
    a, se = np.array(a), np.array(se)
    rows = [{"function": f"n={n}", "lhs": a[n], "primary": "", "secondary": "", "ratio": a[n],
             "ratio_stderr": se[n], "included": True} for n in range(n_max + 1)]
    nu_f = float(np.mean(np.asarray(f(starts), dtype=float))) if nu_f is None else nu_f
    limit_gap = float(abs(np.mean(q_last) - nu_f))
    diag = {"method": method, "n_starts": int(len(starts)), "n_pairs": int(n_pairs),
            "limit_gap": limit_gap, "values": a.tolist(), "stderr": se.tolist()}
    zero = np.flatnonzero(a != 0.0)
    exact_from = int(zero[-1] + 1) if zero.size else 0
    if exact_from <= n_max:
        diag["exact_termination_n"] = exact_from
        return FitReport("qn_decay", {"R": 0.0, "log_R": -math.inf, "r_squared": 1.0}, rows, {"R": 0.0},
                         PASS, f"differences vanish exactly from n={exact_from}", params.delta, diag)
    pos = a > 0
    if pos.sum() < 3 or not pos.all():
        diag["nonpositive_n"] = np.flatnonzero(~pos).tolist()
        return FitReport("qn_decay", {"R": math.nan, "log_R": math.nan, "r_squared": math.nan}, rows,
                         {"R": math.nan}, INCONCLUSIVE, "nonpositive difference estimate; log fit undefined",
                         params.delta, diag)
    n = np.arange(n_max + 1, dtype=float)
    y = np.log(a)
    slope, icpt = np.polyfit(n, y, 1)
    resid = y - (slope * n + icpt)
    r2 = 1.0 - float(np.sum(resid ** 2) / np.sum((y - y.mean()) ** 2))
    # slope stderr from the per-point log stderr (delta method) plus fit residual
    w_se = se / a
    sxx = float(np.sum((n - n.mean()) ** 2))
    slope_se = math.sqrt(float(np.sum(((n - n.mean()) / sxx) ** 2 * w_se ** 2)))
    R = math.exp(slope)
    ok = R < 1.0 and r2 >= 0.95
    return FitReport("qn_decay", {"R": R, "log_R": float(slope), "r_squared": r2}, rows,
                     {"R": R * slope_se, "log_R": slope_se}, PASS if ok else FAIL, "R < 1 and R^2 >= 0.95",
                     params.delta, diag)


# ------------------------------------------------------------- delta scans


def monotone_trend(values, stderrs, slack: float = 3.0) -> dict:
    """Nondecreasing within ``slack`` combined stderr between consecutive entries."""
    v = np.asarray(values, dtype=float)
    s = np.nan_to_num(np.asarray(stderrs, dtype=float))
    drops = []
    for k in range(len(v) - 1):
        allow = slack * math.hypot(s[k], s[k + 1])
        if v[k + 1] < v[k] - allow - 1e-12 * max(1.0, abs(v[k])):
            drops.append(k)
    return {"values": v.tolist(), "stderr": s.tolist(), "monotone": not drops, "violations": drops}


def delta_scan(fit: Callable[[ModelParams], FitReport], params: ModelParams, key: str,
               deltas: Sequence[float] = DELTA_SCAN) -> dict:
    """Run ``fit(params with delta)`` over ``deltas`` and test the trend of ``key``."""
    reports = [fit(params.replace(delta=float(d))) for d in deltas]
    vals = [r.constants[key] for r in reports]
    ses = [r.stderr.get(key, 0.0) for r in reports]
    trend = monotone_trend(vals, ses)
    passing = [d for d, r in zip(deltas, reports) if r.passed]
    return {"deltas": list(deltas), "key": key, "reports": reports, "trend": trend,
            "largest_passing_delta": max(passing) if passing else None}
