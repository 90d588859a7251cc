"""Deterministic discrete-event engine for the asynchronous solver."""
from __future__ import annotations

import csv
import heapq
import math
import time
from pathlib import Path

import numpy as np

from ..config import RunReport, SolverConfig
from ..subdomains import SchwarzSystem
from .delays import DelaySchedule
from .mailbox import Mailbox
from .process import AsyncProcess


class DeadlockError(RuntimeError):
    """No runnable event is left while some process has not stopped."""


class StarvationError(RuntimeError):
    pass


def initial_state(system: SchwarzSystem, x0=None):
    """Local vectors, residuals and the weighted residual norm of the start iterate."""
    xs = system.initial(x0)
    view = dict(enumerate(xs))
    taus = [op.residual(view) for op in system.ops]
    total = 0.0
    for op, t in zip(system.ops, taus):
        total += op.weighted_sq(t)
    return xs, taus, math.sqrt(total)


def _make_processes(system, config, mailbox, x0, record, record_iterates, trace):
    xs, _, norm0 = initial_state(system, x0)
    procs = []
    for s, op in enumerate(system.ops):
        copies = {r: xs[r] for r in op.sources}
        procs.append(AsyncProcess(s, system, config, mailbox, xs[s], copies, norm0,
                                  record=record, record_iterates=record_iterates, trace=trace))
    return procs


def build_report(system: SchwarzSystem, config: SolverConfig, procs, engine: str,
                 sim_time: float, extra: dict) -> tuple[np.ndarray, RunReport]:
    x = system.assemble([pr.x for pr in procs])
    final = float(np.linalg.norm(system.b - system.A @ x))
    ks = [pr.k for pr in procs]
    cs = [pr.isync.installs for pr in procs]
    k_avg = float(np.mean(ks))
    c_avg = float(np.mean(cs))
    reasons = {pr.stop_reason for pr in procs}
    head = procs[0]
    report = RunReport(
        engine=engine,
        scheme=config.scheme,
        iterations=k_avg,
        converged=reasons == {"converged"},
        final_residual=final,
        residual_history=list(head.history),
        coarse_solves=c_avg if config.two_level else 0.0,
        identical_corrections_avg=k_avg / c_avg if c_avg else 0.0,
        sim_time=float(sim_time),
        diverged="diverged" in reasons,
        per_process_iterations=ks,
        per_process_coarse_solves=cs if config.two_level else [0] * len(procs),
        config=config.to_dict(),
        extra=extra,
    )
    report.extra["stop_reasons"] = [pr.stop_reason for pr in procs]
    if config.two_level:
        report.extra["max_corrections_per_install"] = max(
            (max(pr.isync.corrections) for pr in procs if pr.isync.corrections), default=0)
    return x, report


class Simulator:
    """Single-threaded event loop over logical ticks.

    Every process iteration is split into stages (see
    :mod:`asyncschwarz.runtime.process`); an event ``(tick, stage, prio,
    pid)`` runs one stage. All stages of an iteration happen in the tick the
    iteration starts; the next iteration starts ``slowdown`` ticks later,
    plus any idle ticks drawn from the schedule's skip rule. Events with the
    same tick run stage by stage, the root first, then by process id.
    """

    def __init__(self, system: SchwarzSystem, config: SolverConfig, delays: DelaySchedule | None = None,
                 x0=None, record: bool = False, record_iterates: bool = False, trace: bool = False,
                 max_ticks: float | None = None):
        if config.two_level and system.coarse is None:
            raise ValueError("two-level schemes need a coarse space")
        if not 0 <= config.root < system.p:
            raise ValueError(f"root {config.root} out of range for p={system.p}")
        self.system = system
        self.config = config
        self.delays = delays or DelaySchedule()
        self.rng = self.delays.rng()
        self.mailbox = Mailbox(system.p, config.nrcvreqs_per_neighb,
                               latency=lambda src, dst: self.delays.latency(src, dst, self.rng))
        self.trace: list | None = [] if trace else None
        self.procs = _make_processes(system, config, self.mailbox, x0, record, record_iterates, self.trace)
        self.max_ticks = max_ticks
        self.skips: list[list[int]] = [[] for _ in range(system.p)]
        self.now = 0.0

    def _cost(self, s: int) -> float:
        cost = self.delays.slowdown_of(s)
        sched = self.delays
        if sched.skip_prob > 0:
            run = 0
            while run < sched.max_skip and self.rng.random() < sched.skip_prob:
                run += 1
            if run:
                self.skips[s].append(run)
            cost += run
        return cost

    def run(self) -> tuple[np.ndarray, RunReport]:
        t0 = time.perf_counter()
        heap = []
        seq = 0
        root = self.config.root if self.config.coarse_layout == "centralized" else -1
        stage_lists = [pr.stages() for pr in self.procs]
        for pr in self.procs:
            heapq.heappush(heap, (0.0, 0, 0 if pr.s == root else 1, pr.s, seq, 0))
            seq += 1
        while heap:
            tick, stage, prio, s, _, pos = heapq.heappop(heap)
            if self.max_ticks is not None and tick > self.max_ticks:
                raise StarvationError(f"simulation exceeded {self.max_ticks} ticks")
            self.now = tick
            pr = self.procs[s]
            if not pr.stage(stage, tick):
                continue
            stages = stage_lists[s]
            if pos + 1 < len(stages):
                nxt, npos, ntick = stages[pos + 1], pos + 1, tick
            else:
                nxt, npos, ntick = stages[0], 0, tick + self._cost(s)
            heapq.heappush(heap, (ntick, nxt, prio, s, seq, npos))
            seq += 1
        if not all(pr.done for pr in self.procs):
            raise DeadlockError("event queue drained with running processes")
        sim_time = max(pr.finish_time for pr in self.procs)
        extra = {
            "reductions": [len(pr.history) - 1 for pr in self.procs],
            "messages": self.mailbox.sent_count,
            "finish_ticks": [pr.finish_time for pr in self.procs],
            "wall_seconds": time.perf_counter() - t0,
        }
        if self.config.two_level:
            extra["corrections_per_install"] = [list(pr.isync.corrections) for pr in self.procs]
        return build_report(self.system, self.config, self.procs, "sim", sim_time, extra)

    def write_trace(self, path) -> None:
        if self.trace is None:
            raise ValueError("simulator was created without trace=True")
        write_trace_csv(path, self.trace)


def write_trace_csv(path, events) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "process", "event", "detail"])
        for tick, s, kind, detail in events:
            w.writerow([repr(float(tick)), s, kind, detail])


def async_main_loop(system: SchwarzSystem, config: SolverConfig, delays: DelaySchedule | None = None,
                    x0=None, **kw) -> tuple[np.ndarray, RunReport]:
    """Run the asynchronous solver in the simulator and return the assembled
    solution with its report."""
    return Simulator(system, config, delays, x0=x0, **kw).run()
