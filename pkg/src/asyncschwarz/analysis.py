"""
Dense certification of convergence conditions for one- and two-level
Schwarz-type iterations.

All checks build dense ``n x n`` operators and are meant for small
instances (``n`` up to a few thousand).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .decomposition import CoarseSpace, Decomposition
from .linalg import DEFAULT_DENSE_LIMIT, MMatrixVerdict, is_m_matrix, spectral_radius, spectral_radius_nonneg

DEFAULT_THETA_GRID = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01)
DEFAULT_TOL = 1e-8


class DenseLimitError(ValueError):
    pass


@dataclass(eq=False)
class OperatorBundle:
    """Dense ``A``, one-level preconditioner ``M`` and coarse operator ``N``.

    ``N`` is zero when no coarse space is given.
    """

    A: np.ndarray
    M: np.ndarray
    N: np.ndarray
    decomposition: Decomposition | None = None
    description: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @cached_property
    def I_MA(self) -> np.ndarray:
        return np.eye(self.n) - self.M @ self.A

    @cached_property
    def I_NA(self) -> np.ndarray:
        return np.eye(self.n) - self.N @ self.A

    @cached_property
    def NA(self) -> np.ndarray:
        return self.N @ self.A

    def subdomain_term(self, s: int) -> np.ndarray:
        """``(I - MA) R_s^T W_s R_s (I - NA)``."""
        d = self.decomposition
        idx, w = d.subdomain_indices[s], d.weights[s]
        return (self.I_MA[:, idx] * w) @ self.I_NA[idx, :]

    @property
    def terms(self) -> list[np.ndarray]:
        if self.decomposition is None:
            raise ValueError("bundle built without a decomposition")
        return [self.subdomain_term(s) for s in range(self.decomposition.p)]


def build_operators(A, decomposition: Decomposition, coarse: CoarseSpace | None = None,
                    dense_limit: int = DEFAULT_DENSE_LIMIT, description: dict | None = None) -> OperatorBundle:
    """Assemble ``M = sum_s R_s^T W_s A_s^{-1} R_s`` and ``N = R~^T A~^{-1} R~`` densely."""
    n = A.shape[0]
    if n > dense_limit:
        raise DenseLimitError(f"n={n} exceeds the dense limit {dense_limit}")
    Ad = A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=np.float64)
    M = np.zeros((n, n))
    for idx, w in zip(decomposition.subdomain_indices, decomposition.weights):
        As = Ad[np.ix_(idx, idx)]
        M[np.ix_(idx, idx)] += w[:, None] * np.linalg.inv(As)
    if coarse is None:
        N = np.zeros((n, n))
    else:
        R = coarse.R_tilde.toarray()
        N = R.T @ np.linalg.solve(coarse.A_tilde.toarray(), R)
    return OperatorBundle(Ad, M, N, decomposition, dict(description or {}))


@dataclass(frozen=True)
class ConditionResult:
    rho: float
    convergent: bool
    estimate_converged: bool = True

    def to_dict(self) -> dict:
        return {"rho": self.rho, "convergent": self.convergent, "estimate_converged": self.estimate_converged}


def _nonneg_condition(B: np.ndarray, tol: float) -> ConditionResult:
    est = spectral_radius_nonneg(B)
    return ConditionResult(float(est.rho), bool(est.rho < 1.0 - tol), bool(est.converged))


def check_one_level(bundle: OperatorBundle, tol: float = DEFAULT_TOL) -> ConditionResult:
    """``rho(|I - MA|) < 1``: convergence of the one-level asynchronous iteration."""
    return _nonneg_condition(np.abs(bundle.I_MA), tol)


def shared_condition_matrix(bundle: OperatorBundle) -> np.ndarray:
    total = np.zeros((bundle.n, bundle.n))
    for s in range(bundle.decomposition.p):
        total += np.abs(bundle.subdomain_term(s))
    return total


def check_shared_condition(bundle: OperatorBundle, tol: float = DEFAULT_TOL) -> ConditionResult:
    """``rho(sum_s |(I - MA) R_s^T W_s R_s (I - NA)|) < 1`` (replicated coarse solutions)."""
    return _nonneg_condition(shared_condition_matrix(bundle), tol)


def check_lemma_condition(bundle: OperatorBundle, tol: float = DEFAULT_TOL) -> ConditionResult:
    """``rho(|I - MA| |I - NA|) < 1``, which majorizes the shared condition."""
    return _nonneg_condition(np.abs(bundle.I_MA) @ np.abs(bundle.I_NA), tol)


def damping_bound(bundle: OperatorBundle, theta: float) -> float:
    """``rho(|I - MA| (I + theta |NA|))``."""
    B = np.abs(bundle.I_MA) @ (np.eye(bundle.n) + theta * np.abs(bundle.NA))
    return float(spectral_radius_nonneg(B).rho)


@dataclass
class DampingResult:
    theta: float | None
    bounds: dict[float, float]
    admissible: dict[float, bool]
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "grid": [{"theta": t, "bound": self.bounds[t], "admissible": self.admissible[t]} for t in self.bounds],
            "diagnostic": self.diagnostic,
        }


def min_damping(bundle: OperatorBundle, theta_grid=DEFAULT_THETA_GRID, tol: float = DEFAULT_TOL) -> DampingResult:
    """Scan ``theta_grid`` (largest first) for the damping bound ``< 1``.

    Returns the first admissible value of the descending scan, that is the
    weakest damping the bound certifies. ``theta`` is None when the
    one-level iteration itself is not certified or no grid value passes.
    """
    grid = sorted({float(t) for t in theta_grid}, reverse=True)
    if not grid or grid[-1] <= 0:
        raise ValueError("theta grid must contain positive values")
    one = check_one_level(bundle, tol)
    if not one.convergent:
        return DampingResult(None, {}, {}, f"rho(|I-MA|) = {one.rho:.6g} is not below 1")
    bounds, ok = {}, {}
    for t in grid:
        bounds[t] = damping_bound(bundle, t)
        ok[t] = bounds[t] < 1.0 - tol
    chosen = next((t for t in grid if ok[t]), None)
    diag = "" if chosen is not None else "no grid value satisfies the damping bound"
    return DampingResult(chosen, bounds, ok, diag)


def sync_iteration_matrix(bundle: OperatorBundle) -> np.ndarray:
    """``(I - MA)(I - NA)``, the synchronous two-level iteration matrix."""
    return bundle.I_MA @ bundle.I_NA


def certificate(bundle: OperatorBundle, tol: float = DEFAULT_TOL, theta_grid=DEFAULT_THETA_GRID) -> dict:
    """All checks for one instance, as a JSON-ready dict."""
    m = is_m_matrix(bundle.A)
    one = check_one_level(bundle, tol)
    shared = check_shared_condition(bundle, tol)
    lemma = check_lemma_condition(bundle, tol)
    damp = min_damping(bundle, theta_grid, tol)
    T = sync_iteration_matrix(bundle)
    rho_sync = spectral_radius(T)
    rho_one_sync = spectral_radius(bundle.I_MA)
    return {
        "instance": bundle.description,
        "n": bundle.n,
        "m_matrix": m.value if isinstance(m, MMatrixVerdict) else str(m),
        "nonnegative": {
            "I_minus_MA": bool(bundle.I_MA.min() >= -1e-12),
            "I_minus_NA": bool(bundle.I_NA.min() >= -1e-12),
        },
        "one_level": one.to_dict(),
        "shared_condition": shared.to_dict(),
        "lemma_condition": lemma.to_dict(),
        "sync_two_level": {"rho": rho_sync, "convergent": bool(rho_sync < 1.0 - tol)},
        "sync_one_level": {"rho": rho_one_sync, "convergent": bool(rho_one_sync < 1.0 - tol)},
        "damping": damp.to_dict(),
    }


def certificate_json(cert: dict) -> str:
    return json.dumps(cert, indent=2, sort_keys=True)
