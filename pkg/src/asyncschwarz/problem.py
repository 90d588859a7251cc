"""Finite-difference Poisson test problem on the unit cube."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import DEFAULT_DENSE_LIMIT, cg_solve, csr, lu_factor, lu_solve

MAX_UNKNOWNS = 50_000_000


@dataclass(frozen=True)
class PoissonSpec:
    """Interior grid of the unit cube with a uniform source.

    ``reduced`` drops singleton directions from the stencil, so a
    ``(n, 1, 1)`` grid gives the usual 1-D ``tridiag(-1, 2, -1) / h**2``
    instead of the 7-point operator restricted to a line.
    """

    cells_per_dim: tuple[int, int, int]
    source_value: float = 4590.0
    reduced: bool = False

    def __post_init__(self):
        dims = tuple(int(c) for c in self.cells_per_dim)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"cells_per_dim must be three positive counts, got {self.cells_per_dim}")
        object.__setattr__(self, "cells_per_dim", dims)

    @property
    def n(self) -> int:
        nx, ny, nz = self.cells_per_dim
        return nx * ny * nz

    @property
    def h(self) -> float:
        return 1.0 / (max(self.cells_per_dim) + 1)


def _second_difference(m: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1], format="csr")


def assemble_poisson(spec: PoissonSpec) -> tuple[sp.csr_matrix, np.ndarray]:
    """Assemble ``A`` and ``b`` for ``-Laplace(u) = g`` with ``u = 0`` on the boundary.

    Unknowns are ordered lexicographically with x fastest. Every row carries
    ``6/h**2`` on the diagonal (``2*d/h**2`` in reduced mode) and ``-1/h**2``
    for each interior neighbour; ``h = 1/(max(dims) + 1)``.
    """
    if spec.n > MAX_UNKNOWNS:
        raise ValueError(f"grid with {spec.n} unknowns exceeds the supported size {MAX_UNKNOWNS}")
    nx, ny, nz = spec.cells_per_dim
    dims = (nx, ny, nz)
    active = [m > 1 for m in dims] if spec.reduced else [True, True, True]
    if not any(active):
        active = [True, False, False]
    eyes = [sp.identity(m, format="csr") for m in dims]
    A = sp.csr_matrix((spec.n, spec.n))
    for axis in range(3):
        if not active[axis]:
            continue
        factors = [eyes[2], eyes[1], eyes[0]]
        # kron order is (z, y, x) so that x varies fastest
        factors[2 - axis] = _second_difference(dims[axis])
        A = A + sp.kron(sp.kron(factors[0], factors[1]), factors[2], format="csr")
    A = csr(A / spec.h**2)
    b = np.full(spec.n, float(spec.source_value))
    return A, b


def exact_solve(A, b, tol: float = 1e-12, dense_limit: int = DEFAULT_DENSE_LIMIT) -> np.ndarray:
    """Reference solution used as a test oracle."""
    b = np.asarray(b, dtype=np.float64)
    if A.shape[0] <= dense_limit:
        return lu_solve(lu_factor(A.toarray()), b)
    res = cg_solve(A, b, tol=tol, max_iter=20 * A.shape[0])
    if not res.converged:
        raise RuntimeError(f"reference CG did not converge (residual {res.residual:.3e})")
    return res.x
