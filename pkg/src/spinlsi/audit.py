"""Numerical spot checks of the structural assumptions on phase and interaction.

Each check evaluates one inequality on sample points, records the worst
margin (positive or zero means satisfied) and the point attaining it, and
returns a verdict. Failures are report entries, never exceptions.
"""
from __future__ import annotations

import dataclasses
from typing import Dict, List, Optional

import numpy as np

from . import geometry, model
from .geometry import SpinSpace

PASS = "PASS"
FAIL = "FAIL"

# relative tolerance for identities checked with finite differences
_FD_TOL = 1e-5


@dataclasses.dataclass
class AuditEntry:
    name: str
    verdict: str
    margin: float
    witness: Optional[list]
    constants: Dict[str, float] = dataclasses.field(default_factory=dict)
    note: str = ""

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class AuditReport:
    params: dict
    entries: List[AuditEntry]

    @property
    def passed(self) -> bool:
        return all(e.verdict == PASS for e in self.entries)

    def entry(self, name: str) -> AuditEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def failed(self):
        return [e.name for e in self.entries if e.verdict != PASS]

    def to_dict(self):
        return {"params": self.params, "passed": self.passed,
                "entries": [e.to_dict() for e in self.entries]}


def _worst(margins, points):
    margins = np.asarray(margins, dtype=float)
    k = int(np.argmin(margins))
    return float(margins[k]), np.asarray(points[k]).tolist()


def default_sample_points(space: SpinSpace, n: int = 400, seed: int = 0) -> np.ndarray:
    """Off-axis sample points with distances spread over roughly [0.05, 6]."""
    rng = np.random.default_rng(seed)
    if space is SpinSpace.LINE:
        mags = np.exp(rng.uniform(np.log(0.05), np.log(6.0), n))
        return (mags * rng.choice([-1.0, 1.0], n))[:, None]
    lam = np.exp(rng.uniform(np.log(0.05), np.log(6.0), n))
    ang = rng.uniform(0, 2 * np.pi, n)
    rho = rng.uniform(0.3, 1.0, n)
    z = rng.uniform(-0.15, 0.15, n)
    base = np.column_stack([rho * np.cos(ang), rho * np.sin(ang), z])
    return base * np.column_stack([lam, lam, lam * lam])


def _phase_from_d(d, params):
    return np.asarray(d, dtype=float) ** params.p


def audit_assumptions(params: model.ModelParams, sample_points=None, h=None) -> AuditReport:
    """Spot-check every structural assumption on ``sample_points``.

    Neighbour spins are drawn from the same sample set (shifted pairing), so
    ``(x, w)`` pairs cover both small and large ``d(w)``.
    """
    space = params.spin_space
    pts = default_sample_points(space) if sample_points is None else geometry.as_points(sample_points, space)
    if pts.ndim == 1:
        pts = pts[None, :]
    if len(pts) == 0:
        raise ValueError("sample_points must be nonempty")
    n = len(pts)
    omega = np.roll(pts, n // 3 + 1, axis=0)
    d = geometry.metric_d(pts, space)
    dw = geometry.metric_d(omega, space)
    p, r = params.p, params.r
    entries = []

    def fd_grad(fn):
        return geometry.horizontal_grad(fn, pts, space, h=h)

    grad_d = fd_grad(lambda y: geometry.metric_d(y, space))

    # chain rule for the phase
    g_phi = fd_grad(lambda y: geometry.metric_d(y, space) ** p)
    phi1 = p * d ** (p - 1)
    scale = np.maximum(1.0, np.linalg.norm(g_phi, axis=-1))
    rel = np.linalg.norm(g_phi - phi1[:, None] * grad_d, axis=-1) / scale
    m, w = _worst(_FD_TOL - rel, pts)
    ok = m >= 0 and np.all(phi1 >= 0)
    entries.append(AuditEntry("phase_chain_rule", PASS if ok else FAIL, m, w, {"max_rel_error": float(rel.max())},
                              "grad phi = phi1 grad d with phi1 = p d^(p-1) >= 0"))

    # chain rule for each interaction
    g_v = fd_grad(lambda y: (geometry.metric_d(y, space) + dw) ** r)
    U = r * (d + dw) ** (r - 1)
    scale = np.maximum(1.0, np.linalg.norm(g_v, axis=-1))
    rel = np.linalg.norm(g_v - U[:, None] * grad_d, axis=-1) / scale
    m, w = _worst(_FD_TOL - rel, pts)
    entries.append(AuditEntry("interaction_chain_rule", PASS if m >= 0 and np.all(U >= 0) else FAIL, m, w,
                              {"max_rel_error": float(rel.max())}, "grad V = U grad d with U >= 0"))

    # gradient of the distance bounded above and below
    norms = np.linalg.norm(grad_d, axis=-1)
    xi, tau = float(norms.min()), float(norms.max())
    m, w = _worst(norms, pts)
    entries.append(AuditEntry("distance_gradient_bounds", PASS if xi > 0 and np.isfinite(tau) else FAIL, m, w,
                              {"xi": xi, "tau": tau}))

    # sub-Laplacian of d against theta / d
    fit = geometry.fit_laplacian_constant(pts, space, h=None if h is None else 10 * h)
    theta = fit["K"]
    ok = np.isfinite(theta)
    entries.append(AuditEntry("distance_laplacian_bound", PASS if ok else FAIL, float(theta), fit["witness"],
                              {"theta": theta, "theta_two_sided": fit["K_abs"]},
                              "one-sided bound Delta d <= theta / d; two-sided value reported"))

    # phase lower bounds: k0 phi <= d phi1 and d^q <= phi with q >= 2
    phi = _phase_from_d(d, params)
    k0 = float(np.min(d * phi1 / phi))
    q = max(p, 2)
    gap = phi - d ** q
    m, w = _worst(gap / np.maximum(1.0, d ** q), pts)
    ok = k0 > 0 and m >= -1e-12
    entries.append(AuditEntry("phase_growth", PASS if ok else FAIL, m, w, {"k0": k0, "q": q},
                              "d^q <= phi needs q >= 2"))

    # interaction lower bound on the x-dependent part
    V = model.interaction_reduced(d, dw, r)
    ratio = d * U / np.where(V > 0, V, 1.0)
    k0v = float(np.min(ratio))
    raw = float(np.min(d * U / (d + dw) ** r))
    m, w = _worst(ratio, pts)
    entries.append(AuditEntry("interaction_lower_bound", PASS if k0v > 0 else FAIL, m, w,
                              {"k0": k0v, "k0_with_constant_term": raw},
                              "checked on V minus its x-independent part d(w)^r"))

    # growth bounds for |grad V|^2 and V against powers of d
    probe = np.exp(np.linspace(np.log(1e-2), np.log(1e3), 61))
    A, B = np.meshgrid(probe, probe, indexing="ij")
    A = A.ravel()
    B = B.ravel()

    def growth(values, s):
        ratio = values / (1.0 + A ** s + B ** s)
        big = np.maximum(A, B)
        inner = ratio[big <= 1e2].max()
        return float(ratio.max()), float(ratio.max() / inner)

    s_grad = 2 * r - 2
    k_grad, grow = growth(r * r * (A + B) ** (2 * r - 2), s_grad)
    bounded = grow < 1.01
    ok = bounded and s_grad <= p
    entries.append(AuditEntry("interaction_gradient_growth", PASS if ok else FAIL, float(p - s_grad), None,
                              {"s": s_grad, "s_alt": 2 * p - 2, "k": k_grad, "s_le_p": float(s_grad <= p)},
                              "s = 2r - 2 used; 2p - 2 reported for comparison"))

    k_v, grow = growth((A + B) ** r, r)
    ok = grow < 1.01 and r <= p
    entries.append(AuditEntry("interaction_growth", PASS if ok else FAIL, float(p - r), None,
                              {"s": r, "k": k_v}))

    # interaction blows up with the boundary spin
    far = (d + 1e3) ** r
    near = (d + 1.0) ** r
    m, w = _worst(far - 1e3 * near, pts)
    entries.append(AuditEntry("boundary_blowup", PASS if m > 0 else FAIL, m, w))

    # site Hamiltonian with four frozen neighbour distances drawn from the omega pool
    nb = np.stack([dw, np.roll(dw, 1), np.roll(dw, 2), np.roll(dw, 3)], axis=-1)

    def site_H(y, neigh):
        dy = geometry.metric_d(y, space)
        return model.site_energy_from_distances(dy, neigh, params)

    H_x = site_H(pts, nb)
    y = np.roll(pts, n // 2 + 3, axis=0)
    H_y = site_H(y, nb)
    H_xy = site_H(geometry.mul(pts, y, space), nb)
    lam = float(np.max(H_xy / np.maximum(H_x + H_y, 1e-300)))
    lam = max(lam, 1.0 + 1e-12)
    m, w = _worst((lam * (H_x + H_y) - H_xy) / np.maximum(1.0, H_xy), pts)
    entries.append(AuditEntry("energy_subadditive", PASS if np.isfinite(lam) and m >= -1e-12 else FAIL, m, w, {"lambda": lam}))

    H_inv = site_H(geometry.inv(pts, space), nb)
    err = np.abs(H_inv - H_x) / np.maximum(1.0, H_x)
    m, w = _worst(1e-9 - err, pts)
    entries.append(AuditEntry("energy_inverse_symmetric", PASS if m >= 0 else FAIL, m, w, {"max_rel_error": float(err.max())}))

    fr = np.linspace(0.0, 1.0, 17)
    worst = np.inf
    wit = None
    for k in range(min(n, 60)):
        gam = geometry.geodesic_points(pts[k], fr, space)
        Hg = site_H(gam, np.broadcast_to(nb[k], (len(fr), 4)))
        margin = float(np.min(H_x[k] - Hg) / max(1.0, H_x[k]))
        if margin < worst:
            worst, wit = margin, pts[k].tolist()
    entries.append(AuditEntry("energy_along_geodesics", PASS if worst >= -1e-12 else FAIL, worst, wit,
                              note="H along the minimising geodesic from e never exceeds H(x)"))

    info = {"spin_space": space.value, "p": p, "r": r, "delta": params.delta, "J": params.J,
            "n_points": int(n), "backend": geometry.kernels.NAME}
    return AuditReport(info, entries)
