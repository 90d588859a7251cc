"""Threaded engine: one worker thread per subdomain, real (unscheduled) asynchrony.

Workers share only the mailbox, which is lock protected. Sends never block
and receptions are polled, so the interleaving is whatever the OS scheduler
produces. Results are therefore not reproducible run to run; use the
simulator for anything that needs determinism.
"""
from __future__ import annotations

import threading
import time

import numpy as np

from ..config import RunReport, SolverConfig
from ..subdomains import SchwarzSystem
from .delays import DelaySchedule
from .mailbox import Mailbox
from .simulator import _make_processes, build_report


def run_threaded(system: SchwarzSystem, config: SolverConfig, x0=None,
                 delays: DelaySchedule | None = None, timeout: float | None = None
                 ) -> tuple[np.ndarray, RunReport]:
    """Run the asynchronous solver with one thread per process.

    ``delays`` only contributes per-process slowdowns here: a worker with
    factor ``f`` sleeps ``(f - 1)`` times its measured iteration time after
    each iteration. Message latencies are whatever the host provides.
    """
    if config.two_level and system.coarse is None:
        raise ValueError("two-level schemes need a coarse space")
    delays = delays or DelaySchedule()
    mailbox = Mailbox(system.p, config.nrcvreqs_per_neighb, threadsafe=True)
    procs = _make_processes(system, config, mailbox, x0, False, False, None)
    errors: list[BaseException] = []
    deadline = None if timeout is None else time.monotonic() + timeout

    def work(pr):
        stages = pr.stages()
        factor = delays.slowdown_of(pr.s)
        try:
            while True:
                t_start = time.monotonic()
                if deadline is not None and t_start > deadline:
                    pr.stop_reason = "timeout"
                    pr.done = True
                    pr.finish_time = t_start
                    return
                for i in stages:
                    if not pr.stage(i, time.monotonic()):
                        return
                if factor > 1:
                    time.sleep((factor - 1) * (time.monotonic() - t_start))
        except BaseException as exc:  # surfaced in the caller
            errors.append(exc)
            pr.done = True

    t0 = time.monotonic()
    threads = [threading.Thread(target=work, args=(pr,), name=f"subdomain-{pr.s}", daemon=True)
               for pr in procs]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    elapsed = time.monotonic() - t0
    extra = {
        "reductions": [len(pr.history) - 1 for pr in procs],
        "messages": mailbox.sent_count,
        "wall_seconds": elapsed,
    }
    if config.two_level:
        extra["corrections_per_install"] = [list(pr.isync.corrections) for pr in procs]
    # sim_time has no meaning here; wall time stays in extra
    return build_report(system, config, procs, "threads", 0.0, extra)
