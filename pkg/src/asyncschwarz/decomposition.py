"""
Overlapping box decompositions, partition-of-unity weights and the
aggregation coarse space.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import LUFactors, csr, lu_factor, lu_solve

WEIGHT_STRATEGIES = ("multiplicity", "restricted")


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Subdomain index sets with their weights.

    ``subdomain_indices[s]`` is the sorted array of global indices in
    subdomain ``s`` and ``weights[s]`` the matching diagonal of its
    weighting matrix. ``owner[i]`` is the subdomain whose non-overlapped
    core contains ``i``.
    """

    global_n: int
    subdomain_indices: list[np.ndarray]
    owner: np.ndarray
    weights: list[np.ndarray]
    overlap: int = 0
    strategy: str = "multiplicity"
    grid_dims: tuple[int, int, int] | None = None
    proc_grid: tuple[int, int, int] | None = None
    _meta: dict = field(default_factory=dict, repr=False)

    @property
    def p(self) -> int:
        return len(self.subdomain_indices)

    @cached_property
    def multiplicity(self) -> np.ndarray:
        m = np.zeros(self.global_n, dtype=np.int64)
        for idx in self.subdomain_indices:
            m[idx] += 1
        return m

    def restriction(self, s: int) -> sp.csr_matrix:
        idx = self.subdomain_indices[s]
        return sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), self.global_n))

    def assemble(self, local: Sequence[np.ndarray]) -> np.ndarray:
        """Global vector ``sum_s R_s^T W_s local[s]``."""
        x = np.zeros(self.global_n)
        for idx, w, xs in zip(self.subdomain_indices, self.weights, local):
            x[idx] += w * xs
        return x

    def scatter(self, x: np.ndarray) -> list[np.ndarray]:
        return [np.array(x[idx], dtype=np.float64) for idx in self.subdomain_indices]

    def summary(self) -> dict:
        sizes = [len(idx) for idx in self.subdomain_indices]
        owned = np.bincount(self.owner, minlength=self.p).tolist()
        return {
            "p": self.p,
            "global_n": self.global_n,
            "grid_dims": list(self.grid_dims) if self.grid_dims else None,
            "proc_grid": list(self.proc_grid) if self.proc_grid else None,
            "overlap": self.overlap,
            "weight_strategy": self.strategy,
            "subdomain_sizes": sizes,
            "owned_counts": owned,
            "overlap_counts": [sz - ow for sz, ow in zip(sizes, owned)],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)

    @classmethod
    def from_sets(cls, global_n: int, sets: Sequence[Sequence[int]], owner=None,
                  strategy: str = "multiplicity") -> "Decomposition":
        """Build from explicit index sets. Without ``owner`` each index is
        owned by the first set that contains it."""
        idx = [np.unique(np.asarray(s, dtype=np.int64)) for s in sets]
        if owner is None:
            owner = np.full(global_n, -1, dtype=np.int64)
            for s in range(len(idx) - 1, -1, -1):
                owner[idx[s]] = s
        owner = np.asarray(owner, dtype=np.int64)
        d = cls(global_n, idx, owner, [np.ones(len(i)) for i in idx])
        _validate(d)
        return build_weights(d, strategy)


def _validate(d: Decomposition) -> None:
    for s, idx in enumerate(d.subdomain_indices):
        if len(idx) == 0:
            raise ValueError(f"subdomain {s} is empty")
        if idx[0] < 0 or idx[-1] >= d.global_n:
            raise ValueError(f"subdomain {s} has indices outside [0, {d.global_n})")
    if np.any(d.multiplicity == 0):
        missing = int(np.flatnonzero(d.multiplicity == 0)[0])
        raise ValueError(f"index {missing} belongs to no subdomain")
    if d.owner.shape != (d.global_n,) or d.owner.min() < 0 or d.owner.max() >= d.p:
        raise ValueError("every index needs an owning subdomain")
    for s, idx in enumerate(d.subdomain_indices):
        if not np.all(np.isin(np.flatnonzero(d.owner == s), idx)):
            raise ValueError(f"subdomain {s} does not contain all indices it owns")


def _split(n: int, parts: int) -> list[tuple[int, int]]:
    sizes = [n // parts + (1 if i < n % parts else 0) for i in range(parts)]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    return [(int(starts[i]), int(starts[i + 1])) for i in range(parts)]


def partition_box(grid_dims, proc_grid, overlap: int = 0, strategy: str = "multiplicity") -> Decomposition:
    """Split a lexicographically ordered ``nx*ny*nz`` grid into boxes.

    Each core box is grown by ``overlap`` mesh steps in every direction and
    clipped at the domain boundary. Subdomains are numbered with the first
    process coordinate fastest.
    """
    grid_dims = tuple(int(g) for g in grid_dims)
    proc_grid = tuple(int(q) for q in proc_grid)
    if len(grid_dims) != 3 or len(proc_grid) != 3:
        raise ValueError("grid_dims and proc_grid need three entries")
    if overlap < 0:
        raise ValueError("overlap must be nonnegative")
    for axis, (n, q) in enumerate(zip(grid_dims, proc_grid)):
        if q < 1 or n < 1:
            raise ValueError("grid and process counts must be positive")
        if q > n:
            raise ValueError(f"axis {axis}: {q} processes for {n} grid points leaves empty subdomains")
    nx, ny, nz = grid_dims
    N = nx * ny * nz
    cores = [_split(n, q) for n, q in zip(grid_dims, proc_grid)]
    owner = np.empty(N, dtype=np.int64)
    sets = []
    gid = np.arange(N).reshape(nz, ny, nx)
    for kz, (z0, z1) in enumerate(cores[2]):
        for ky, (y0, y1) in enumerate(cores[1]):
            for kx, (x0, x1) in enumerate(cores[0]):
                s = kx + proc_grid[0] * (ky + proc_grid[1] * kz)
                owner[gid[z0:z1, y0:y1, x0:x1].ravel()] = s
                ext = gid[max(z0 - overlap, 0):min(z1 + overlap, nz),
                          max(y0 - overlap, 0):min(y1 + overlap, ny),
                          max(x0 - overlap, 0):min(x1 + overlap, nx)]
                sets.append((s, np.sort(ext.ravel())))
    sets.sort(key=lambda t: t[0])
    idx = [t[1] for t in sets]
    d = Decomposition(N, idx, owner, [np.ones(len(i)) for i in idx], overlap=overlap,
                      grid_dims=grid_dims, proc_grid=proc_grid)
    _validate(d)
    return build_weights(d, strategy)


def build_weights(d: Decomposition, strategy: str = "multiplicity") -> Decomposition:
    """Attach partition-of-unity weights.

    ``restricted``: the owner takes weight 1 and other sharers 0.
    ``multiplicity``: each of the ``m`` sharers of an index takes ``1/m``.
    """
    if strategy not in WEIGHT_STRATEGIES:
        raise ValueError(f"unknown weight strategy {strategy!r}")
    weights = []
    for s, idx in enumerate(d.subdomain_indices):
        if strategy == "restricted":
            w = (d.owner[idx] == s).astype(np.float64)
        else:
            w = 1.0 / d.multiplicity[idx]
        weights.append(w)
    return replace(d, weights=weights, strategy=strategy)


def restrict_block(A, d: Decomposition, s: int) -> sp.csr_matrix:
    """Principal submatrix of ``A`` on subdomain ``s``."""
    if not 0 <= s < d.p:
        raise IndexError(f"subdomain {s} out of range for p={d.p}")
    idx = d.subdomain_indices[s]
    return csr(csr(A)[idx][:, idx])


@dataclass(frozen=True, eq=False)
class CoarseSpace:
    """One coarse unknown per subdomain, aggregated over owned indices."""

    R_tilde: sp.csr_matrix
    A_tilde: sp.csr_matrix

    @property
    def P_tilde(self) -> sp.csr_matrix:
        return self.R_tilde.T.tocsr()

    @property
    def size(self) -> int:
        return self.R_tilde.shape[0]

    @cached_property
    def factors(self) -> LUFactors:
        return lu_factor(self.A_tilde.toarray())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return lu_solve(self.factors, rhs)


def build_coarse(d: Decomposition, A) -> CoarseSpace:
    """Aggregation coarse space ``R~`` (row ``s`` = indicator of the indices
    owned by ``s``) with the Galerkin matrix ``R~ A R~^T``."""
    A = csr(A)
    if A.shape != (d.global_n, d.global_n):
        raise ValueError(f"A has shape {A.shape}, decomposition expects {d.global_n}")
    n = d.global_n
    R = sp.csr_matrix((np.ones(n), (d.owner, np.arange(n))), shape=(d.p, n))
    R = csr(R)
    if np.any(np.diff(R.indptr) == 0):
        raise ValueError("a subdomain owns no index")
    A_tilde = csr(R @ A @ R.T)
    return CoarseSpace(R, A_tilde)
