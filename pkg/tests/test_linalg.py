import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asyncschwarz.analysis import build_operators
from asyncschwarz.decomposition import partition_box
from asyncschwarz.linalg import (
    CGBreakdownError,
    MMatrixVerdict,
    SingularMatrixError,
    abs_matrix,
    cg_solve,
    check_csr,
    csr,
    is_m_matrix,
    is_symmetric,
    lu_factor,
    lu_solve,
    read_matrix_market,
    spectral_radius_nonneg,
    spmv,
    weighted_max_norm,
    write_matrix_market,
)
from asyncschwarz.problem import PoissonSpec, assemble_poisson

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def stencil_apply(dims, x):
    """7-point Laplacian (unscaled) applied by explicit neighbour enumeration."""
    nx, ny, nz = dims
    out = np.zeros_like(x)
    for k, j, i in itertools.product(range(nz), range(ny), range(nx)):
        row = i + nx * (j + ny * k)
        acc = 6.0 * x[row]
        for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = i + di, j + dj, k + dk
            if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz:
                acc -= x[a + nx * (b + ny * c)]
        out[row] = acc
    return out


# -- spmv -----------------------------------------------------------------------

def test_spmv_identity():
    np.testing.assert_array_equal(spmv(csr(np.eye(2)), np.array([3.0, -1.0])), [3.0, -1.0])


def test_spmv_row_sums():
    np.testing.assert_array_equal(spmv(csr([[2, -1], [-1, 2]]), np.ones(2)), [1.0, 1.0])


def test_spmv_matches_dense_stencil():
    spec = PoissonSpec((3, 3, 3))
    A, _ = assemble_poisson(spec)
    y = spmv(A, np.ones(27))
    ref = stencil_apply((3, 3, 3), np.ones(27)) / spec.h**2
    np.testing.assert_allclose(y, ref, rtol=1e-14)
    centre = 1 + 3 * (1 + 3 * 1)
    assert y[centre] == 0.0
    assert np.all(np.delete(y, centre) > 0)


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        spmv(csr(np.eye(3)), np.ones(2))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 6), elements=finite), arrays(np.float64, 6, elements=finite))
def test_spmv_agrees_with_dense(M, x):
    np.testing.assert_allclose(spmv(csr(M), x), M @ x, rtol=1e-12, atol=1e-12)


def test_csr_is_canonical():
    A = csr(sp.coo_matrix(([1.0, 2.0, 0.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2)))
    check_csr(A)
    assert A.nnz == 1 and A[0, 1] == 3.0


def test_check_csr_rejects_explicit_zero():
    A = sp.csr_matrix((np.array([0.0]), np.array([0]), np.array([0, 1])), shape=(1, 1))
    with pytest.raises(ValueError, match="zero"):
        check_csr(A)


# -- norms and spectral radius ---------------------------------------------------

def test_weighted_max_norm_examples():
    assert weighted_max_norm(np.eye(4), [1, 2, 3, 4]) == 1.0
    assert weighted_max_norm([[0, 1], [1, 0]], [1, 2]) == 2.0
    with pytest.raises(ValueError):
        weighted_max_norm(np.eye(2), [1, 0])


def test_weighted_max_norm_ones_is_inf_norm():
    rng = np.random.default_rng(0)
    for _ in range(100):
        A = rng.standard_normal((5, 5))
        assert weighted_max_norm(A, np.ones(5)) == pytest.approx(np.linalg.norm(A, np.inf), rel=1e-14)


def test_abs_matrix():
    np.testing.assert_array_equal(abs_matrix([[-1, 2], [0, -3]]), [[1, 2], [0, 3]])
    np.testing.assert_array_equal(abs_matrix(np.zeros((3, 3))), np.zeros((3, 3)))
    B = np.random.default_rng(1).standard_normal((4, 4))
    np.testing.assert_array_equal(abs_matrix(abs_matrix(B)), abs_matrix(B))


def test_spectral_radius_trivial():
    assert spectral_radius_nonneg(np.zeros((3, 3))).rho == 0.0
    est = spectral_radius_nonneg(np.diag([0.5, 0.25]))
    assert est.converged and est.rho == pytest.approx(0.5, abs=1e-12)


def test_spectral_radius_rejects_negative():
    with pytest.raises(ValueError):
        spectral_radius_nonneg([[0.0, -1.0], [1.0, 0.0]])


def test_spectral_radius_two_subdomain_char_poly():
    # 1-D Poisson n=4 split in two disjoint halves
    A, _ = assemble_poisson(PoissonSpec((4, 1, 1), reduced=True))
    d = partition_box((4, 1, 1), (2, 1, 1), 0)
    B = np.abs(build_operators(A, d).I_MA)
    ref = np.max(np.abs(np.roots(np.poly(B))))
    est = spectral_radius_nonneg(B)
    assert est.converged
    assert est.rho == pytest.approx(ref, abs=1e-9)


def test_spectral_radius_imprimitive():
    # permutation-like matrix: plain power iteration oscillates
    B = np.array([[0.0, 2.0], [0.5, 0.0]])
    est = spectral_radius_nonneg(B)
    assert est.converged and est.rho == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)), st.floats(0.1, 10))
def test_spectral_radius_matches_eigvals_and_scales(B, c):
    ref = np.max(np.abs(np.linalg.eigvals(B)))
    est = spectral_radius_nonneg(B)
    if est.converged:
        assert est.rho == pytest.approx(ref, rel=1e-6, abs=1e-8)
        scaled = spectral_radius_nonneg(c * B)
        if scaled.converged:
            assert scaled.rho == pytest.approx(c * est.rho, rel=1e-6, abs=1e-8)


# -- M-matrices ------------------------------------------------------------------

def test_is_m_matrix_examples():
    assert is_m_matrix([[2, -1], [-1, 2]]) is MMatrixVerdict.YES
    assert is_m_matrix([[1, 1], [0, 1]]) is MMatrixVerdict.NO
    A, _ = assemble_poisson(PoissonSpec((4, 4, 4)))
    assert is_m_matrix(A) is MMatrixVerdict.YES


def test_is_m_matrix_dense_fallback():
    # not diagonally dominant but inverse-nonnegative
    A = np.array([[1.0, -2.0], [-0.1, 1.0]])
    assert np.all(np.linalg.inv(A) >= 0)
    assert is_m_matrix(A) is MMatrixVerdict.YES
    assert is_m_matrix(A, n_dense_limit=1) is MMatrixVerdict.UNKNOWN
    assert is_m_matrix([[1.0, -1.0], [-1.0, 1.0]]) is MMatrixVerdict.NO  # singular


# -- direct and iterative solvers ---------------------------------------------------

def test_lu_examples():
    b = np.array([4.0, -2.0, 7.0])
    np.testing.assert_allclose(lu_solve(lu_factor(np.eye(3)), b), b)
    np.testing.assert_allclose(lu_solve(lu_factor([[2, -1], [-1, 2]]), [1, 1]), [1, 1])


def test_lu_residual_diag_dominant():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((10, 10))
    A += np.diag(np.abs(A).sum(axis=1) + 1)
    b = rng.standard_normal(10)
    x = lu_solve(lu_factor(A), b)
    assert np.max(np.abs(spmv(csr(A), x) - b)) <= 1e-10 * np.max(np.abs(b))


def test_lu_singular():
    with pytest.raises(SingularMatrixError):
        lu_factor([[1.0, 2.0], [2.0, 4.0]])


def test_cg_examples():
    r = cg_solve(csr(np.eye(3)), np.zeros(3))
    assert r.iterations == 0 and np.all(r.x == 0)
    r = cg_solve(csr(np.diag([1.0, 2.0, 4.0])), np.array([1.0, 2.0, 4.0]))
    np.testing.assert_allclose(r.x, np.ones(3), rtol=1e-12)


def test_cg_poisson_residual_and_agrees_with_lu():
    A, _ = assemble_poisson(PoissonSpec((8, 8, 8)))
    b = np.random.default_rng(4).standard_normal(A.shape[0])
    r = cg_solve(A, b, tol=1e-9)
    assert r.converged
    assert np.linalg.norm(b - spmv(A, r.x)) <= 1e-9 * np.linalg.norm(b) * 1.01
    x_lu = lu_solve(lu_factor(A), b)
    assert np.linalg.norm(r.x - x_lu) <= 1e-8 * np.linalg.norm(x_lu)


def test_cg_breakdown_on_indefinite():
    with pytest.raises(CGBreakdownError):
        cg_solve(csr(np.diag([1.0, -1.0])), np.array([1.0, 3.0]))


def test_cg_flags_max_iter():
    A, _ = assemble_poisson(PoissonSpec((6, 6, 6)))
    r = cg_solve(A, np.ones(A.shape[0]), tol=1e-14, max_iter=2)
    assert not r.converged and r.iterations == 2


def test_matrix_market_round_trip(tmp_path):
    A, _ = assemble_poisson(PoissonSpec((3, 2, 2)))
    path = tmp_path / "a.mtx"
    write_matrix_market(path, A)
    B = read_matrix_market(path)
    assert (A != B).nnz == 0
    assert is_symmetric(B)
