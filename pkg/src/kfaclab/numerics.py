"""Dense double-precision linear algebra on small matrices.

Conventions used throughout the package:

* A matrix is a 2-D ``numpy.ndarray`` of ``float64``.
* ``vec`` stacks columns: entry ``(r, c)`` of an ``m x n`` matrix lands at
  position ``c * m + r`` of the resulting column vector.
* Kronecker products pair with that convention as
  ``kron(A, G) @ vec(X) == vec(G @ X @ A.T)`` for ``X`` of shape
  ``(rows of G) x (rows of A)``.

The third point is load-bearing: it is what makes the factored damping
formulas (two-sided small-matrix products) interchangeable with the dense
Kronecker solve used by the verification oracle.  ``kron`` itself is
oracle-only and guarded by an element cap so it cannot sneak into a
training-scale code path.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import CapacityError, NumericError, ShapeError

# kron() refuses to materialize results above this many elements unless the
# caller raises the cap explicitly.
KRON_ELEMENT_CAP = 1_000_000


class EigenPair(NamedTuple):
    """Orthonormal eigenvectors (columns of ``q``) and descending eigenvalues."""

    q: np.ndarray
    values: np.ndarray


def as_matrix(data) -> np.ndarray:
    """Coerce nested sequences or an array to a 2-D float64 matrix."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


def _require_matrix(m, name: str) -> np.ndarray:
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D ndarray")
    return m


def _require_square(m, name: str) -> np.ndarray:
    m = _require_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"{name}: expected a square matrix, got {m.shape[0]}x{m.shape[1]}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = _require_matrix(a, "matmul lhs")
    b = _require_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    out = a @ b
    if not np.isfinite(out).all():
        raise NumericError("matmul produced non-finite values (overflow or non-finite input)")
    return out


def sym_eig(m: np.ndarray) -> EigenPair:
    """Eigendecomposition of a (nearly) symmetric matrix.

    The input is symmetrized as ``(M + M.T) / 2`` first; batch-estimated
    covariance factors are symmetric only up to rounding.  Eigenvalues are
    returned in descending order.
    """
    m = _require_square(m, "sym_eig")
    sym = (m + m.T) / 2.0
    try:
        values, q = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"eigendecomposition failed to converge for a {m.shape[0]}x{m.shape[0]} matrix"
        ) from exc
    # eigh returns ascending order
    values = np.ascontiguousarray(values[::-1])
    q = np.ascontiguousarray(q[:, ::-1])
    if not (np.isfinite(values).all() and np.isfinite(q).all()):
        raise NumericError(
            f"eigendecomposition produced non-finite values for a {m.shape[0]}x{m.shape[0]} matrix"
        )
    return EigenPair(q=q, values=values)


def sym_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    m = _require_square(m, "sym_inverse")
    n = m.shape[0]
    try:
        chol = scipy.linalg.cho_factor(m, lower=True)
        inv = scipy.linalg.cho_solve(chol, np.eye(n))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(
            f"Cholesky inversion failed for a {n}x{n} matrix (not positive definite?)"
        ) from exc
    if not np.isfinite(inv).all():
        raise NumericError(f"inverse of a {n}x{n} matrix has non-finite entries")
    # cho_solve output can be asymmetric in the last ulp
    return (inv + inv.T) / 2.0


def kron(a: np.ndarray, b: np.ndarray, element_cap: int = KRON_ELEMENT_CAP) -> np.ndarray:
    """Kronecker product, capped in size (verification oracle only)."""
    a = _require_matrix(a, "kron lhs")
    b = _require_matrix(b, "kron rhs")
    n_elements = a.size * b.size
    if n_elements > element_cap:
        raise CapacityError(
            f"kron result would hold {n_elements} elements, above the cap of {element_cap}; "
            "the dense Kronecker product is a verification oracle, not a training path"
        )
    return np.kron(a, b)


def vec(m: np.ndarray) -> np.ndarray:
    """Column-stack a matrix into an ``(rows*cols) x 1`` column vector."""
    m = _require_matrix(m, "vec")
    return m.reshape((-1, 1), order="F").copy()


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`: reshape a column vector back to ``rows x cols``."""
    v = _require_matrix(v, "unvec")
    if v.shape != (rows * cols, 1):
        raise ShapeError(f"unvec: expected shape ({rows * cols}, 1), got {v.shape}")
    return v.reshape((rows, cols), order="F").copy()
