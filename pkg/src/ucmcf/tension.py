"""Lagrange-multiplier (tension) solves for the compressing flows.

Both flows determine their multiplier from a periodic Schroedinger-type
equation whose potential is the squared curvature:

* normalized flow:  sigma'' - |xi''|^2 sigma = -1
* original flow:    the multiplier has unit mean and satisfies
  sigma_t'' - L^-2 |eta''|^2 sigma_t = -(nonlocal constant)

The original-flow system is reduced to a local solve: let u solve
u'' - L^-2 k^2 u = -1 and set sigma_t = u / (h sum u).  Summing the
u-equation over the periodic grid makes the u'' part telescope to zero,
leaving h sum k^2 u = L^2; dividing the u-equation by (h sum u) then
reproduces the nonlocal constant -1/(h sum u) = -L^-2 h sum sigma_t k^2
exactly.  That identity is asserted at solve time.
"""

from dataclasses import dataclass

import numpy as np

from .cyclic import apply_cyclic_tridiagonal, solve_cyclic_tridiagonal
from .grid_curve import curvature_sq, edge_cv, length


class TensionSolveError(RuntimeError):
    """Singular or inconsistent tension system."""


@dataclass(frozen=True)
class TensionField:
    """Grid samples of a multiplier with its defining-equation residual."""

    values: np.ndarray
    residual_norm: float
    mean: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def min(self):
        return float(self.values.min())


def _schrodinger_solve(k2, h, rhs):
    """Solve (D_ss - diag(k2)) x = rhs on the periodic grid."""
    n = len(k2)
    inv_h2 = 1.0 / (h * h)
    diag = -2.0 * inv_h2 - k2
    off = np.full(n, inv_h2)
    x = solve_cyclic_tridiagonal(off, diag, off, inv_h2, inv_h2, rhs)
    resid = apply_cyclic_tridiagonal(off, diag, off, inv_h2, inv_h2, x) - rhs
    return x, float(np.max(np.abs(resid)))


def solve_with_potential(k2, h, rhs=None):
    """Tension solve with a prescribed potential; rhs defaults to -1."""
    k2 = np.asarray(k2, dtype=float)
    if rhs is None:
        rhs = -np.ones_like(k2)
    if h * np.sum(k2) <= 0.0:
        raise TensionSolveError("zero curvature energy: singular tension system")
    values, resid = _schrodinger_solve(k2, h, rhs)
    return TensionField(values, resid, float(h * values.sum()))


def solve_normalized_tension(curve):
    """Multiplier of the normalized flow: sigma'' - k^2 sigma = -1."""
    return solve_with_potential(curvature_sq(curve), curve.h)


def solve_original_tension(curve, speed_cv_ceiling=1e-6):
    """Unit-mean multiplier of the original flow via the local u-solve."""
    cv = edge_cv(curve)
    if cv > speed_cv_ceiling:
        raise TensionSolveError(
            f"curve speed is not uniform (edge CV {cv:.2e} > {speed_cv_ceiling:.0e})"
        )
    k2 = curvature_sq(curve)
    L = length(curve)
    h = curve.h
    rho = h * k2.sum()
    if rho <= 0.0:
        raise TensionSolveError("zero curvature energy: singular tension system")
    u, _ = _schrodinger_solve(k2 / L**2, h, -np.ones(curve.n))
    total = h * u.sum()
    if total <= 0.0:
        raise TensionSolveError("non-positive multiplier integral: discretization breakdown")
    # periodic sum of the u-equation: h sum k^2 u = L^2 (see module docstring)
    identity = h * np.dot(k2, u)
    if not np.isclose(identity, L**2, rtol=1e-8, atol=1e-12):
        raise TensionSolveError(
            f"nonlocal-consistency identity violated: {identity:.3e} vs {L**2:.3e}"
        )
    sigma_t = u / total
    lam = 1.0 / total
    inv_h2 = 1.0 / (h * h)
    diag = -2.0 * inv_h2 - k2 / L**2
    off = np.full(curve.n, inv_h2)
    resid = (
        apply_cyclic_tridiagonal(off, diag, off, inv_h2, inv_h2, sigma_t) + lam
    )
    return TensionField(sigma_t, float(np.max(np.abs(resid))), float(h * sigma_t.sum()))


def lambda_speed(curve, tension):
    """Length-decay rate -L dL/dt = L^-2 h sum sigma_t k^2 for the original flow."""
    k2 = curvature_sq(curve)
    return float(curve.h * np.dot(tension.values, k2) / length(curve) ** 2)


def greens_bracket(curve, tension):
    """Pointwise bracket [e^(-rho/2)/rho, 1 + 1/rho] for the normalized multiplier."""
    rho = float(curve.h * curvature_sq(curve).sum())
    lo = np.exp(-rho / 2.0) / rho
    hi = 1.0 + 1.0 / rho
    return lo, hi, float(tension.values.min()), float(tension.values.max())
