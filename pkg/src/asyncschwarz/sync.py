"""Synchronous one-level and two-level Schwarz-type iterations."""
from __future__ import annotations

import math
import time
from typing import Callable, Sequence

import numpy as np

from .config import RunReport, SolverConfig
from .subdomains import SchwarzSystem


def local_update_f(system: SchwarzSystem, s: int, xs: Sequence[np.ndarray]) -> np.ndarray:
    """One application of the local map of subdomain ``s`` to the local vectors ``xs``."""
    return system.ops[s].apply_f(dict(enumerate(xs)))


def _weighted_norm(system: SchwarzSystem, taus) -> float:
    return math.sqrt(sum(op.weighted_sq(t) for op, t in zip(system.ops, taus)))


def _residuals(system: SchwarzSystem, xs) -> list[np.ndarray]:
    view = dict(enumerate(xs))
    return [op.residual(view) for op in system.ops]


def _coarse_solution(system: SchwarzSystem, taus) -> np.ndarray:
    parts = [op.coarse_component(t) for op, t in zip(system.ops, taus)]
    return system.coarse_solve(system.sum_components(parts))


def _run(system: SchwarzSystem, config: SolverConfig, step: Callable, x0,
         record_iterates: bool, slowdown, latency: float = 0.0) -> tuple[np.ndarray, RunReport]:
    t0 = time.perf_counter()
    xs = system.initial(x0)
    taus = _residuals(system, xs)
    norm = _weighted_norm(system, taus)
    history = [norm]
    iterates = []
    initial = norm
    k = 0
    diverged = False
    while norm > config.epsilon and k < config.k_max:
        xs = step(xs, taus)
        taus = _residuals(system, xs)
        norm = _weighted_norm(system, taus)
        history.append(norm)
        k += 1
        if record_iterates:
            iterates.append([x.copy() for x in xs])
        if not math.isfinite(norm) or norm > config.divergence_factor * max(initial, np.finfo(float).tiny):
            diverged = True
            break
    x = system.assemble(xs)
    final = float(np.linalg.norm(system.b - system.A @ x))
    # every iteration waits for the slowest process plus one message latency
    per_iter = (max(slowdown) if slowdown else 1.0) + latency
    two = config.two_level
    report = RunReport(
        engine="sync",
        scheme=config.scheme,
        iterations=float(k),
        converged=bool(norm <= config.epsilon and not diverged),
        final_residual=final,
        residual_history=history,
        coarse_solves=float(k if two else 0),
        identical_corrections_avg=1.0 if two and k else 0.0,
        sim_time=float(k * per_iter),
        diverged=diverged,
        per_process_iterations=[k] * system.p,
        per_process_coarse_solves=[k if two else 0] * system.p,
        config=config.to_dict(),
        extra={"wall_seconds": time.perf_counter() - t0},
    )
    if record_iterates:
        report.extra["iterates"] = iterates
    return x, report


def solve_one_level(system: SchwarzSystem, config: SolverConfig, x0=None, record_iterates=False,
                    slowdown=None, latency: float = 0.0) -> tuple[np.ndarray, RunReport]:
    """Synchronous one-level iteration: every subdomain applies its local map
    to the same iterate, then interface data are exchanged."""
    if config.scheme != "one_level":
        raise ValueError("solve_one_level needs scheme='one_level'")

    def step(xs, taus):
        return [op.update(xs[s], taus[s]) for s, op in enumerate(system.ops)]

    return _run(system, config, step, x0, record_iterates, slowdown, latency)


def solve_two_level_sync(system: SchwarzSystem, config: SolverConfig, x0=None, record_iterates=False,
                         slowdown=None, latency: float = 0.0) -> tuple[np.ndarray, RunReport]:
    """Synchronous two-level iteration with coarse correction.

    Multiplicative: coarse solve on the current residual, correct every
    local vector (including interface copies), then apply the local maps.
    Additive: local maps and coarse correction both use the residual of the
    same iterate, ``x + M tau + theta N tau``.

    Replicated and centralized layouts perform identical arithmetic in the
    synchronous setting and therefore share this routine.
    """
    if not config.two_level:
        raise ValueError("solve_two_level_sync needs a two-level scheme")
    if system.coarse is None:
        raise ValueError("two-level schemes need a coarse space")
    theta = config.theta
    ops = system.ops

    def step_mult(xs, taus):
        xt = _coarse_solution(system, taus)
        corrected = [x + theta * op.correction(xt) for x, op in zip(xs, ops)]
        view = dict(enumerate(corrected))
        return [op.apply_f(view) for op in ops]

    def step_add(xs, taus):
        xt = _coarse_solution(system, taus)
        return [op.update(xs[s], taus[s]) + theta * op.correction(xt) for s, op in enumerate(ops)]

    step = step_mult if config.scheme == "two_level_mult" else step_add
    return _run(system, config, step, x0, record_iterates, slowdown, latency)


def solve_sync(system: SchwarzSystem, config: SolverConfig, **kw) -> tuple[np.ndarray, RunReport]:
    if config.scheme == "one_level":
        return solve_one_level(system, config, **kw)
    return solve_two_level_sync(system, config, **kw)
