"""Stationary states of the normalized flow and their conserved quantities.

A stationary loop satisfies (sigma xi')' + xi = 0 with unit speed.  Such a
loop is planar with positive curvature, sigma^2 * k is constant along it,
and tau = sigma^2 obeys the first integral

    (tau')^2 / 2 + V(tau) = lambda,   V(tau) = 4 tau^(3/2) - 6 tau_bar tau,

with lambda in [-2 tau_bar^3, 0).  Simple stationary loops whose mean
tension is at least (27/32) / (4 pi^2) are round circles of radius
1/(2 pi) with constant tension 1/(4 pi^2).
"""

from dataclasses import dataclass

import numpy as np

from .grid_curve import curvature_sq, project_to_circle_manifold
from .tension import solve_normalized_tension

FOUR_PI_SQ = 4.0 * np.pi**2
RIGIDITY_SIGMA_BAR = (27.0 / 32.0) / FOUR_PI_SQ


@dataclass(frozen=True)
class FirstIntegralRecord:
    tau_values: np.ndarray
    lambda_estimate: float
    lambda_spread: float
    tau_bar: float


def _conservative_flux(points, sigma, h):
    """(sigma xi')' with the same edge-averaged stencil as the steppers."""
    sh = 0.5 * (sigma + np.roll(sigma, -1))
    fwd = (np.roll(points, -1, axis=0) - points) / h
    flux = sh[:, None] * fwd
    return (flux - np.roll(flux, 1, axis=0)) / h


def stationary_residual(curve, tension=None):
    """Max norm of (sigma xi')' + xi over the grid."""
    if tension is None:
        tension = solve_normalized_tension(curve)
    resid = _conservative_flux(curve.points, tension.values, curve.h) + curve.points
    return float(np.max(np.linalg.norm(resid, axis=1)))


def check_sigma_sq_curvature(curve, tension=None, k_floor=1e-8):
    """Coefficient of variation of sigma^2 * k where curvature is nonzero."""
    if tension is None:
        tension = solve_normalized_tension(curve)
    k = np.sqrt(curvature_sq(curve))
    mask = k > k_floor
    vals = tension.values[mask] ** 2 * k[mask]
    if len(vals) == 0:
        return 0.0
    return float(vals.std() / vals.mean())


def first_integral_check(curve, tension=None):
    """Evaluate the conserved quantity of the stationary tension ODE."""
    if tension is None:
        tension = solve_normalized_tension(curve)
    sigma = tension.values
    h = curve.h
    tau = sigma**2
    tau_bar = float(h * sigma.sum())
    dtau = (np.roll(tau, -1) - np.roll(tau, 1)) / (2.0 * h)
    energy = 0.5 * dtau**2 + 4.0 * tau**1.5 - 6.0 * tau_bar * tau
    return FirstIntegralRecord(
        tau_values=tau,
        lambda_estimate=float(energy.mean()),
        lambda_spread=float(energy.max() - energy.min()),
        tau_bar=tau_bar,
    )


# ---------------------------------------------------------------------------
# simplicity and rigidity
# ---------------------------------------------------------------------------

def _segments_intersect(p, q, r, s, eps=1e-12):
    """Proper or touching intersection of segments pq and rs in the plane."""
    d1v = q - p
    d2v = s - r
    denom = d1v[0] * d2v[1] - d1v[1] * d2v[0]
    diff = r - p
    if abs(denom) < eps * (np.linalg.norm(d1v) * np.linalg.norm(d2v) + eps):
        # parallel: overlap iff collinear and ranges intersect
        cross = diff[0] * d1v[1] - diff[1] * d1v[0]
        if abs(cross) > eps:
            return False
        t0 = np.dot(diff, d1v) / np.dot(d1v, d1v)
        t1 = t0 + np.dot(d2v, d1v) / np.dot(d1v, d1v)
        lo, hi = min(t0, t1), max(t0, t1)
        return hi >= -eps and lo <= 1.0 + eps
    t = (diff[0] * d2v[1] - diff[1] * d2v[0]) / denom
    u = (diff[0] * d1v[1] - diff[1] * d1v[0]) / denom
    return -eps <= t <= 1.0 + eps and -eps <= u <= 1.0 + eps


def is_simple(curve):
    """Segment-pair sweep: no two non-adjacent edges of the projected
    polygon may intersect.  Quadratic in n; intended for n <= 1024."""
    pts = curve.points[:, :2]
    n = curve.n
    segs = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # adjacent around the seam
            if _segments_intersect(segs[i][0], segs[i][1], segs[j][0], segs[j][1]):
                return False
    return True


def planarity_defect(curve, tol=1e-8):
    """Number of covariance eigenvalues above tol beyond the first two."""
    pts = curve.points
    cov = pts.T @ pts / curve.n
    eig = np.sort(np.linalg.eigvalsh(cov))[::-1]
    return int(np.sum(eig[2:] > tol)) if curve.dim > 2 else 0


def rigidity_probe(curve, tension=None, circle_tol=1e-3):
    """Report-only probe of circle rigidity for near-stationary loops.

    When the mean tension clears the rigidity threshold and the loop is
    simple, the conclusion (constant tension 1/(4 pi^2), circle of radius
    1/(2 pi) centered at 0) is asserted to `circle_tol`; violations are
    returned as events, never raised.
    """
    if tension is None:
        tension = solve_normalized_tension(curve)
    sigma_bar = tension.mean
    radii = np.linalg.norm(curve.points, axis=1)
    max_sigma_dev = float(np.max(np.abs(tension.values - 1.0 / FOUR_PI_SQ)))
    max_radius_dev = float(np.max(np.abs(radii - 1.0 / (2.0 * np.pi))))
    simple = is_simple(curve)
    hypothesis = bool(sigma_bar >= RIGIDITY_SIGMA_BAR) and simple
    events = []
    if hypothesis:
        if max_sigma_dev > circle_tol:
            events.append({"check": "rigidity_sigma",
                           "magnitude": max_sigma_dev})
        if max_radius_dev > circle_tol:
            events.append({"check": "rigidity_radius",
                           "magnitude": max_radius_dev})
    return {
        "sigma_bar": float(sigma_bar),
        "hypothesis_met": hypothesis,
        "simple": simple,
        "max_sigma_dev": max_sigma_dev,
        "max_radius_dev": max_radius_dev,
        "events": events,
    }


def stationary_report(curve, residual_gate=1e-2):
    """Full stationary suite for one curve, serializable to JSON."""
    tension = solve_normalized_tension(curve)
    resid = stationary_residual(curve, tension)
    report = {
        "residual": resid,
        "sigma_sq_curvature_cv": check_sigma_sq_curvature(curve, tension),
        "planarity_defect": planarity_defect(curve),
        "min_curvature": float(np.sqrt(curvature_sq(curve)).min()),
        "circle_fit_c": project_to_circle_manifold(curve).c,
    }
    if resid < residual_gate:
        rec = first_integral_check(curve, tension)
        report["first_integral"] = {
            "lambda": rec.lambda_estimate,
            "spread": rec.lambda_spread,
            "tau_bar": rec.tau_bar,
        }
        report["rigidity"] = rigidity_probe(curve, tension)
    return report
