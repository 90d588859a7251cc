"""
Sparse and small-dense linear algebra kernels.

Sparse matrices are ``scipy.sparse.csr_matrix`` objects kept in canonical
form (sorted column indices, no duplicates, no stored zeros). Dense matrices
are 2-D numpy arrays and vectors are 1-D float64 arrays.
"""
from __future__ import annotations

import enum
import math
from typing import NamedTuple

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

__all__ = [
    "DEFAULT_DENSE_LIMIT",
    "SingularMatrixError",
    "CGBreakdownError",
    "MMatrixVerdict",
    "SpectralEstimate",
    "CGResult",
    "LUFactors",
    "csr",
    "check_csr",
    "spmv",
    "weighted_max_norm",
    "abs_matrix",
    "spectral_radius_nonneg",
    "spectral_radius",
    "is_m_matrix",
    "lu_factor",
    "lu_solve",
    "cg_solve",
    "is_symmetric",
    "read_matrix_market",
    "write_matrix_market",
]

DEFAULT_DENSE_LIMIT = 4096


class SingularMatrixError(ArithmeticError):
    pass


class CGBreakdownError(ArithmeticError):
    pass


class MMatrixVerdict(str, enum.Enum):
    YES = "yes"
    NO = "no"
    UNKNOWN = "unknown"


def csr(A) -> sp.csr_matrix:
    """Return ``A`` as a canonical float64 CSR matrix (copy)."""
    M = sp.csr_matrix(A, dtype=np.float64, copy=True)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def check_csr(A: sp.csr_matrix) -> None:
    """Raise ``ValueError`` if ``A`` violates the canonical CSR invariants."""
    if not sp.isspmatrix_csr(A):
        raise ValueError("expected a CSR matrix")
    nrows, ncols = A.shape
    ptr, ind = A.indptr, A.indices
    if len(ptr) != nrows + 1 or ptr[0] != 0 or ptr[-1] != len(A.data) or len(ind) != len(A.data):
        raise ValueError("inconsistent row offsets")
    if np.any(np.diff(ptr) < 0):
        raise ValueError("row offsets must be nondecreasing")
    if len(ind) and (ind.min() < 0 or ind.max() >= ncols):
        raise ValueError("column index out of range")
    for i in range(nrows):
        row = ind[ptr[i]:ptr[i + 1]]
        if np.any(np.diff(row) <= 0):
            raise ValueError(f"row {i}: column indices not strictly increasing")
    if np.any(A.data == 0.0):
        raise ValueError("explicit zero stored")


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product.

    The CSR kernel accumulates each row left to right over its stored
    entries, so the result is reproducible bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix has {A.shape[1]} columns, vector has {x.shape[0]} entries")
    return A @ x


def weighted_max_norm(A, w) -> float:
    r"""Weighted maximum norm :math:`\max_i w_i^{-1} \sum_j |a_{ij}| w_j`."""
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != w.shape[0]:
        raise ValueError("A must be square with one weight per row")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return float(np.max((np.abs(A) @ w) / w))


def abs_matrix(B):
    """Entrywise absolute value (dense or sparse)."""
    if sp.issparse(B):
        return abs(B)
    return np.abs(np.asarray(B, dtype=np.float64))


class SpectralEstimate(NamedTuple):
    rho: float
    converged: bool
    iterations: int


def spectral_radius_nonneg(B, tol: float = 1e-10, max_iter: int = 10000) -> SpectralEstimate:
    """Power-iteration estimate of the Perron root of an entrywise nonnegative matrix.

    Iterates from the all-ones vector and tracks the Collatz-Wielandt
    bounds ``min_i (Bv)_i / v_i <= rho <= max_i (Bv)_i / v_i`` over the
    significant entries of ``v``; it stops once they agree to ``tol``
    (relative) and returns the upper bound. If the bounds have not met
    after half the budget (imprimitive matrices oscillate) it continues on
    ``B + sigma*I``, ``sigma`` the current upper bound, whose Perron root is
    exactly ``rho + sigma``.
    """
    B = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("B must be square")
    if np.any(B < 0):
        raise ValueError("B must be entrywise nonnegative")
    n = B.shape[0]
    if n == 0:
        return SpectralEstimate(0.0, True, 0)
    v = np.ones(n)
    shift = 0.0
    upper = math.inf
    switch_at = max_iter // 2
    for it in range(1, max_iter + 1):
        y = B @ v
        if shift:
            y += shift * v
        top = float(np.max(y))
        if top == 0.0:
            return SpectralEstimate(0.0, True, it)
        mask = v > 1e-10 * np.max(v)
        ratios = y[mask] / v[mask]
        upper, lower = float(ratios.max()), float(ratios.min())
        if upper - lower <= tol * max(upper, 1.0):
            return SpectralEstimate(max(upper - shift, 0.0), True, it)
        v = y / top
        if it == switch_at and shift == 0.0:
            shift = upper
    return SpectralEstimate(max(upper - shift, 0.0), False, max_iter)


def spectral_radius(B) -> float:
    """Spectral radius of a general dense matrix via its eigenvalues."""
    B = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=np.float64)
    if B.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(B))))


def _diagonally_dominant(A: sp.csr_matrix) -> bool:
    diag = A.diagonal()
    if np.any(diag <= 0):
        return False
    offsum = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    slack = diag - offsum
    scale = np.maximum(np.abs(diag), 1.0)
    if np.any(slack < -1e-14 * scale):
        return False
    strict = slack > 1e-14 * scale
    if np.all(strict):
        return True
    if not np.any(strict):
        return False
    ncomp, _ = connected_components(A, directed=True, connection="strong")
    return ncomp == 1


def is_m_matrix(A, n_dense_limit: int = DEFAULT_DENSE_LIMIT) -> MMatrixVerdict:
    """Classify ``A`` as a nonsingular M-matrix.

    Positive off-diagonal entries give ``NO``. Strict or irreducible
    diagonal dominance with a positive diagonal is sufficient for ``YES``.
    Otherwise small matrices are inverted densely and the inverse checked for
    nonnegativity; larger ones are ``UNKNOWN``.
    """
    A = csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    off = A - sp.diags(A.diagonal())
    if off.nnz and off.data.max() > 0:
        return MMatrixVerdict.NO
    if _diagonally_dominant(A):
        return MMatrixVerdict.YES
    if A.shape[0] > n_dense_limit:
        return MMatrixVerdict.UNKNOWN
    try:
        inv = lu_solve(lu_factor(A.toarray()), np.eye(A.shape[0]))
    except SingularMatrixError:
        return MMatrixVerdict.NO
    tol_inv = 1e-12 * np.max(np.sum(np.abs(inv), axis=1))
    return MMatrixVerdict.YES if np.all(inv >= -tol_inv) else MMatrixVerdict.NO


class LUFactors(NamedTuple):
    lu: np.ndarray
    piv: np.ndarray


def lu_factor(A, pivot_tol: float = 1e-14) -> LUFactors:
    """Partial-pivoting LU factorisation (LAPACK ``getrf``).

    Raises :class:`SingularMatrixError` when a pivot is below
    ``pivot_tol`` times the largest entry of ``A``.
    """
    A = A.toarray() if sp.issparse(A) else np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if A.shape[0] == 0:
        return LUFactors(A, np.zeros(0, dtype=np.int32))
    scale = np.max(np.abs(A))
    if scale == 0 or not np.isfinite(scale):
        raise SingularMatrixError("matrix is zero or not finite")
    lu, piv, info = scipy.linalg.lapack.dgetrf(A)
    pivots = np.abs(np.diag(lu))
    if info > 0 or np.min(pivots) <= pivot_tol * scale:
        raise SingularMatrixError(f"zero pivot (min |u_ii| = {np.min(pivots):.3e})")
    return LUFactors(lu, piv)


def lu_solve(factors: LUFactors, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if factors.lu.shape[0] == 0:
        return b.copy()
    x, info = scipy.linalg.lapack.dgetrs(factors.lu, factors.piv, b)
    if info != 0:
        raise ValueError(f"getrs failed with info={info}")
    return x


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool
    residual: float


def cg_solve(A, b, tol: float = 1e-9, max_iter: int | None = None, x0=None) -> CGResult:
    """Unpreconditioned conjugate gradient for SPD ``A``.

    Stops when ``||b - A x||_2 <= tol * ||b||_2`` (recursively updated
    residual). ``converged`` is False when ``max_iter`` is reached.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n + 100
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x if x0 is not None else b.copy()
    bnorm = float(np.linalg.norm(b))
    target = tol * bnorm
    rr = float(r @ r)
    if math.sqrt(rr) <= target:
        return CGResult(x, 0, True, math.sqrt(rr))
    d = r.copy()
    for it in range(1, max_iter + 1):
        q = A @ d
        curv = float(d @ q)
        if curv <= 0.0:
            raise CGBreakdownError(f"nonpositive curvature {curv:.3e} at iteration {it}")
        alpha = rr / curv
        x += alpha * d
        r -= alpha * q
        rr_new = float(r @ r)
        if math.sqrt(rr_new) <= target:
            return CGResult(x, it, True, math.sqrt(rr_new))
        d *= rr_new / rr
        d += r
        rr = rr_new
    return CGResult(x, max_iter, False, math.sqrt(rr))


def is_symmetric(A, rtol: float = 0.0) -> bool:
    A = csr(A)
    diff = A - A.T
    if diff.nnz == 0:
        return True
    return float(abs(diff).max()) <= rtol * float(abs(A).max())


def read_matrix_market(path) -> sp.csr_matrix:
    return csr(scipy.io.mmread(path))


def write_matrix_market(path, A, comment: str = "") -> None:
    scipy.io.mmwrite(path, sp.coo_matrix(A), comment=comment, field="real", symmetry="general")
