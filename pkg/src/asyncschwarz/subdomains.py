"""
Per-subdomain operators shared by the synchronous and asynchronous solvers.

A process ``s`` owns its local vector ``x^(s)`` and holds copies of the
local vectors of the processes it depends on. Everything it computes goes
through :class:`LocalOperator`, so two engines fed the same data produce
bit-identical results.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import SolverConfig, SolverKind
from .decomposition import CoarseSpace, Decomposition
from .linalg import cg_solve, csr


def make_local_solver(A_s: sp.csr_matrix, kind: SolverKind) -> Callable[[np.ndarray], np.ndarray]:
    if kind.kind == "lu":
        lu = spla.splu(A_s.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1)
        return lu.solve
    tol = kind.tol

    def solve(r: np.ndarray) -> np.ndarray:
        res = cg_solve(A_s, r, tol=tol)
        if not res.converged:
            raise ArithmeticError(f"local CG stalled at residual {res.residual:.3e}")
        return res.x

    return solve


@dataclass(eq=False)
class LocalOperator:
    """Data and kernels of one subdomain.

    ``gather`` lists, for every process ``r`` whose weighted values enter
    the rows of subdomain ``s`` (including ``s`` itself), the positions in
    the extended column set, the matching local indices of ``x^(r)`` and
    their weights.
    """

    s: int
    indices: np.ndarray
    weights: np.ndarray
    b: np.ndarray
    A_ext: sp.csr_matrix
    ext_size: int
    gather: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]]
    owner_local: np.ndarray
    p: int
    solve_local: Callable[[np.ndarray], np.ndarray]

    @property
    def sources(self) -> list[int]:
        """Processes other than ``s`` whose data ``s`` reads."""
        return [r for r, *_ in self.gather if r != self.s]

    def residual(self, xs: Mapping[int, np.ndarray]) -> np.ndarray:
        """``b^(s) - sum_r R^(s) A R^(r)^T W^(r) x^(r)`` from the given local vectors."""
        z = np.zeros(self.ext_size)
        for r, pos, loc, w in self.gather:
            z[pos] += w * xs[r][loc]
        return self.b - self.A_ext @ z

    def update(self, x_self: np.ndarray, tau: np.ndarray) -> np.ndarray:
        return x_self + self.solve_local(tau)

    def apply_f(self, xs: Mapping[int, np.ndarray]) -> np.ndarray:
        """The local fixed-point map ``f^(s)``."""
        return self.update(xs[self.s], self.residual(xs))

    def coarse_component(self, tau: np.ndarray) -> np.ndarray:
        """``R~ R^(s)^T W^(s) tau``: one entry per coarse unknown."""
        return np.bincount(self.owner_local, weights=self.weights * tau, minlength=self.p)

    def correction(self, x_coarse: np.ndarray) -> np.ndarray:
        """``R^(s) R~^T x~``."""
        return x_coarse[self.owner_local]

    def weighted_sq(self, tau: np.ndarray) -> float:
        return float(np.dot(tau, self.weights * tau))


class SchwarzSystem:
    """All subdomain operators of a decomposed problem plus the coarse space."""

    def __init__(self, A, b, decomposition: Decomposition, coarse: CoarseSpace | None = None,
                 local_solver: "SolverKind | str" = "lu", coarse_solver: "SolverKind | str" = "lu"):
        self.A = csr(A)
        self.b = np.asarray(b, dtype=np.float64)
        self.decomposition = d = decomposition
        if self.A.shape != (d.global_n, d.global_n) or self.b.shape != (d.global_n,):
            raise ValueError("problem size does not match the decomposition")
        self.coarse = coarse
        self.local_kind = SolverKind.parse(local_solver, "local_solver")
        self.coarse_kind = SolverKind.parse(coarse_solver, "coarse_solver")
        self.ops = [self._build(s) for s in range(d.p)]
        dests: list[list[int]] = [[] for _ in range(d.p)]
        for op in self.ops:
            for r in op.sources:
                dests[r].append(op.s)
        self.dests = [sorted(x) for x in dests]

    @classmethod
    def from_config(cls, A, b, decomposition, coarse, config: SolverConfig) -> "SchwarzSystem":
        return cls(A, b, decomposition, coarse, config.local_solver, config.coarse_solver)

    @property
    def p(self) -> int:
        return self.decomposition.p

    def _build(self, s: int) -> LocalOperator:
        d = self.decomposition
        idx = d.subdomain_indices[s]
        rows = self.A[idx]
        cols = np.unique(rows.indices)
        A_ext = csr(rows[:, cols])
        gather = []
        for r in range(d.p):
            idx_r, w_r = d.subdomain_indices[r], d.weights[r]
            loc = np.flatnonzero(np.isin(idx_r, cols) & (w_r != 0))
            if len(loc) == 0:
                continue
            pos = np.searchsorted(cols, idx_r[loc])
            gather.append((r, pos, loc, w_r[loc].copy()))
        A_s = csr(rows[:, idx])
        return LocalOperator(
            s=s, indices=idx, weights=d.weights[s], b=self.b[idx].copy(), A_ext=A_ext,
            ext_size=len(cols), gather=gather, owner_local=d.owner[idx], p=d.p,
            solve_local=make_local_solver(A_s, self.local_kind),
        )

    def initial(self, x0=None) -> list[np.ndarray]:
        if x0 is None:
            return [np.zeros(len(op.indices)) for op in self.ops]
        return self.decomposition.scatter(np.asarray(x0, dtype=np.float64))

    def assemble(self, xs: Sequence[np.ndarray]) -> np.ndarray:
        return self.decomposition.assemble(xs)

    def true_residual(self, xs: Sequence[np.ndarray]) -> float:
        x = self.assemble(xs)
        return float(np.linalg.norm(self.b - self.A @ x))

    def coarse_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.coarse is None:
            raise ValueError("no coarse space configured")
        if self.coarse_kind.kind == "lu":
            return self.coarse.solve(rhs)
        res = cg_solve(self.coarse.A_tilde, rhs, tol=self.coarse_kind.tol)
        if not res.converged:
            raise ArithmeticError(f"coarse CG stalled at residual {res.residual:.3e}")
        return res.x

    @staticmethod
    def sum_components(parts: Sequence[np.ndarray]) -> np.ndarray:
        """Sum coarse components in process order (fixed, for reproducibility)."""
        total = np.array(parts[0], dtype=np.float64)
        for part in parts[1:]:
            total = total + part
        return total
