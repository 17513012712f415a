"""Solver for cyclic (periodic) tridiagonal systems.

The periodic corner entries are handled with a Sherman-Morrison rank-one
correction of a plain tridiagonal LU, so the cost stays O(n) per solve.
The tridiagonal core is LAPACK's banded solver.
"""

import numpy as np
from scipy.linalg import solve_banded


def solve_cyclic_tridiagonal(lower, diag, upper, corner_ll, corner_ur, rhs):
    """Solve A x = rhs where A is tridiagonal plus periodic corners.

    A[i, i] = diag[i], A[i+1, i] = lower[i], A[i, i+1] = upper[i],
    A[n-1, 0] = corner_ll, A[0, n-1] = corner_ur.

    rhs may be (n,) or (n, k); the factorization is shared across columns.
    """
    diag = np.asarray(diag, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = diag.shape[0]
    if n < 3:
        raise ValueError("cyclic system needs n >= 3")

    rhs = np.asarray(rhs, dtype=float)
    single = rhs.ndim == 1
    b = rhs.reshape(n, -1)

    # A = A' + u v^T with u = (gamma, 0, ..., 0, corner_ll),
    # v = (1, 0, ..., 0, corner_ur / gamma); A' stays tridiagonal.
    gamma = -diag[0]
    if gamma == 0.0:
        gamma = -1.0
    d_mod = diag.copy()
    d_mod[0] = diag[0] - gamma
    d_mod[-1] = diag[-1] - corner_ll * corner_ur / gamma

    ab = np.zeros((3, n))
    ab[0, 1:] = upper[: n - 1]
    ab[1, :] = d_mod
    ab[2, : n - 1] = lower[: n - 1]

    u = np.zeros(n)
    u[0] = gamma
    u[-1] = corner_ll

    stacked = np.column_stack([b, u])
    sol = solve_banded((1, 1), ab, stacked)
    y = sol[:, :-1]
    z = sol[:, -1]

    vy = y[0, :] + (corner_ur / gamma) * y[-1, :]
    vz = z[0] + (corner_ur / gamma) * z[-1]
    x = y - np.outer(z, vy / (1.0 + vz))
    return x[:, 0] if single else x


def apply_cyclic_tridiagonal(lower, diag, upper, corner_ll, corner_ur, x):
    """Matrix-vector product for the same cyclic layout (residual checks)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xm = x.reshape(len(diag), -1)
    out = diag[:, None] * xm
    out[1:] += lower[: len(diag) - 1, None] * xm[:-1]
    out[:-1] += upper[: len(diag) - 1, None] * xm[1:]
    out[0] += corner_ur * xm[-1]
    out[-1] += corner_ll * xm[0]
    return out[:, 0] if single else out
