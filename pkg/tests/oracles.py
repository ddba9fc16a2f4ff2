"""Independent brute-force oracles used to freeze expected values.

None of these share code with the package's closed-form solvers.
"""
import math

import numpy as np
from scipy import integrate, optimize, special


def _hamiltonian_rhs(_t, s, kappa):
    x1, x2, _x3, p1, p2 = s
    h1 = p1 - 0.5 * x2 * kappa
    h2 = p2 + 0.5 * x1 * kappa
    return [h1, h2, 0.5 * (x1 * h2 - x2 * h1), -0.5 * kappa * h2, 0.5 * kappa * h1]


def shoot(alpha, kappa, T):
    """Endpoint of the unit-speed normal geodesic from e with covector (cos a, sin a, kappa)."""
    s0 = [0.0, 0.0, 0.0, math.cos(alpha), math.sin(alpha)]
    sol = integrate.solve_ivp(_hamiltonian_rhs, (0.0, T), s0, args=(kappa,), method="DOP853",
                              rtol=1e-12, atol=1e-13)
    return sol.y[:3, -1]


def cc_distance_shooting(target):
    """CC distance to e by solving the geodesic boundary-value problem from many starts.

    Returns the shortest converged shooting time.
    """
    target = np.asarray(target, dtype=float)
    scale = max(math.hypot(target[0], target[1]), math.sqrt(abs(target[2])), 1e-3)
    best = math.inf
    for alpha0 in np.linspace(0, 2 * math.pi, 4, endpoint=False):
        for k0 in (-4.0, -1.0, 1.0, 4.0):
            for t0 in (1.5,):
                def resid(v):
                    return shoot(v[0], v[1] / scale, v[2] * scale) - target

                try:
                    res = optimize.least_squares(resid, [alpha0, k0, t0], xtol=1e-14, ftol=1e-14,
                                                 gtol=1e-14, max_nfev=100)
                except Exception:
                    continue
                if res.x[2] > 0 and np.max(np.abs(res.fun)) < 1e-9:
                    T = res.x[2] * scale
                    # discard geodesics that loop past a full turn (not minimising)
                    if abs(res.x[1] / scale) * T <= 2 * math.pi + 1e-6:
                        best = min(best, T)
    return best


def cc_distance_polygon(target, n=64):
    """Upper bound from the shortest n-gon horizontal path with the right lifted area."""
    x1, x2, x3 = map(float, target)
    end = np.array([x1, x2])

    def unpack(v):
        pts = np.vstack([[0.0, 0.0], v.reshape(-1, 2), end])
        return pts

    def length(v):
        pts = unpack(v)
        return np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))

    def length_grad(v):
        pts = unpack(v)
        seg = np.diff(pts, axis=0)
        unit = seg / np.linalg.norm(seg, axis=1)[:, None]
        return (unit[:-1] - unit[1:]).ravel()

    def area(v):
        pts = unpack(v)
        return 0.5 * np.sum(pts[:-1, 0] * pts[1:, 1] - pts[:-1, 1] * pts[1:, 0]) - x3

    def area_grad(v):
        pts = unpack(v)
        g = 0.5 * np.column_stack([pts[2:, 1] - pts[:-2, 1], pts[:-2, 0] - pts[2:, 0]])
        return g.ravel()

    # start on a circle through 0 and the endpoint (any bulge with the right sign)
    s = np.linspace(0, 1, n + 1)[1:-1]
    chord = max(np.linalg.norm(end), 1e-3)
    normal = np.array([-end[1], end[0]]) / chord if np.linalg.norm(end) > 0 else np.array([0.0, 1.0])
    base = np.outer(s, end)
    if np.linalg.norm(end) == 0:
        ang = 2 * math.pi * s
        r0 = math.sqrt(abs(x3) / math.pi)
        base = np.column_stack([r0 * (1 - np.cos(ang)), math.copysign(1, x3) * r0 * np.sin(ang)])
        v0 = base
    else:
        bulge = math.copysign(1.0, x3) * np.sin(math.pi * s) * chord
        v0 = base + np.outer(bulge, normal)
    res = optimize.minimize(length, v0.ravel(), jac=length_grad, method="SLSQP",
                            constraints=[{"type": "eq", "fun": area, "jac": area_grad}],
                            options={"maxiter": 2000, "ftol": 1e-14})
    return float(res.fun)


def gamma_quartic_moment():
    """Variance of x under exp(-x**4) on the line: Gamma(3/4) / Gamma(1/4)."""
    return special.gamma(0.75) / special.gamma(0.25)


def line_expectation(g, weight, lim=6.0):
    """Adaptive quadrature of g under the normalized density weight on [-lim, lim]."""
    num = integrate.quad(lambda x: g(x) * weight(x), -lim, lim, limit=400, epsabs=1e-14, epsrel=1e-13)[0]
    den = integrate.quad(weight, -lim, lim, limit=400, epsabs=1e-14, epsrel=1e-13)[0]
    return num / den


def radial_h1_expectation(g, p=4, lim=6.0):
    """E g(d) under exp(-d^p) on H1 via the homogeneous-dimension-4 volume law t^3 dt."""
    num = integrate.quad(lambda t: g(t) * t ** 3 * math.exp(-t ** p), 0, lim, limit=400, epsabs=1e-15)[0]
    den = integrate.quad(lambda t: t ** 3 * math.exp(-t ** p), 0, lim, limit=400, epsabs=1e-15)[0]
    return num / den
