from __future__ import annotations

import numpy as np
import scipy.linalg

from .exceptions import SingularDesignError

PIVOT_TOL = 1e-10


def dependent_columns(matrix: np.ndarray, names, tol: float = PIVOT_TOL) -> list[str]:
    """Names of columns dropped by a pivoted QR of a (Gram-type) matrix.

    Columns are first rescaled to unit diagonal so the relative pivot
    threshold does not depend on units. Zero-variance columns are always
    reported.
    """
    p = matrix.shape[0]
    if p == 0:
        return []
    diag = np.diag(matrix).copy()
    zero = diag <= 0
    scale = np.where(zero, 1.0, 1.0 / np.sqrt(np.where(zero, 1.0, diag)))
    scaled = matrix * scale[:, None] * scale[None, :]
    scaled[zero, :] = 0.0
    scaled[:, zero] = 0.0
    _, r, piv = scipy.linalg.qr(scaled, pivoting=True)
    d = np.abs(np.diag(r))
    if d.size == 0 or d[0] == 0:
        return [str(names[j]) for j in range(p)]
    rank = int(np.sum(d > tol * d[0]))
    return [str(names[j]) for j in sorted(piv[rank:])]


def solve_checked(matrix: np.ndarray, rhs: np.ndarray, names, what: str = "design") -> np.ndarray:
    """Solve ``matrix @ x = rhs`` after a rank-revealing check.

    Raises :class:`SingularDesignError` naming the dependent columns instead of
    falling back to a pseudo-inverse.
    """
    bad = dependent_columns(matrix, names)
    if bad:
        raise SingularDesignError(
            f"singular {what}: linearly dependent or constant columns {bad}", bad
        )
    diag = np.sqrt(np.diag(matrix))
    scale = diag[:, None] if rhs.ndim == 2 else diag
    scaled = matrix / diag[:, None] / diag[None, :]
    b = rhs / scale
    lu = scipy.linalg.lu_factor(scaled)
    x = scipy.linalg.lu_solve(lu, b)
    # one step of iterative refinement keeps the residual at rounding level
    x = x + scipy.linalg.lu_solve(lu, b - scaled @ x)
    return x / scale


def canonical_order(*blocks) -> np.ndarray:
    """Row order determined by row contents alone (lexicographic, first block first).

    Reductions evaluated in this order give bitwise-identical results for any
    permutation of the input rows.
    """
    keys = []
    for b in blocks:
        if b is None:
            continue
        b = np.asarray(b, dtype=float)
        keys.extend([b] if b.ndim == 1 else list(b.T))
    # np.lexsort treats its last key as the primary one
    return np.lexsort(keys[::-1])


def gram(rows: np.ndarray) -> np.ndarray:
    """``rows' rows`` summed in canonical row order."""
    r = rows[canonical_order(rows)] if rows.shape[0] else rows
    return r.T @ r
