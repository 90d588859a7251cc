"""
State and per-iteration steps of one asynchronous process.

An outer iteration is split into stages so that an engine can interleave
processes at stage granularity:

====  ==========================================================
0     stop test, coarse procedure phase 0 (start ISYNC)
1     coarse phase 1 (snapshot complete -> start gather of tau~)
2     coarse phase 2 (gather complete -> coarse solve / broadcast)
3     coarse correction of the local vector, interface send
4     interface receive
5     local map f, interface send
6     interface receive, residual, pipelined norm reduction
====  ==========================================================

With zero delays and all processes advancing in lock step this ordering
reproduces the synchronous two-level iteration exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..config import SolverConfig
from ..subdomains import SchwarzSystem
from .mailbox import Mailbox, Message

N_STAGES = 7
COARSE_STAGES = (0, 1, 2, 3, 4)


class IsyncError(RuntimeError):
    """An ISYNC was started on a buffer that still has one in flight."""


@dataclass
class FineRequests:
    recv_slots: dict[int, int]
    send: dict[int, Message | None]

    @property
    def pending_receives(self) -> int:
        return sum(self.recv_slots.values())


@dataclass
class IsyncRequest:
    tag: str
    round: int
    sources: list[int]
    buffer: dict[int, np.ndarray]
    done: bool = False


@dataclass
class IsyncState:
    phase: int = 0
    round: int = 0
    request: IsyncRequest | None = None
    snapshot: dict[int, np.ndarray] | None = None
    tau_coarse: np.ndarray | None = None
    x_coarse: np.ndarray | None = None
    nbidentcorr: int = 0
    installs: int = 0
    corrections: list[int] = field(default_factory=list)

    def set_phase(self, new: int) -> None:
        if new != (self.phase + 1) % 3 and not (self.phase == 0 and new == 2):
            raise IsyncError(f"illegal ISYNC phase transition {self.phase} -> {new}")
        self.phase = new


class AsyncProcess:
    """One subdomain process of the asynchronous two-level solver."""

    def __init__(self, s: int, system: SchwarzSystem, config: SolverConfig, mailbox: Mailbox,
                 x0: np.ndarray, copies: dict[int, np.ndarray], norm0: float,
                 record: bool = False, record_iterates: bool = False, trace=None):
        self.s = s
        self.system = system
        self.op = system.ops[s]
        self.cfg = config
        self.mb = mailbox
        self.p = system.p
        self.x = x0
        self.copies = dict(copies)
        self.sources = self.op.sources
        self.dests = system.dests[s]
        self.others = [r for r in range(self.p) if r != s]
        # x~ starts at zero, so corrections before the first coarse solve are no-ops
        self.isync = IsyncState(x_coarse=np.zeros(self.p))
        self.fine = self.fine_init()
        self.k = 0
        self.norm = norm0
        self.norm0 = norm0
        self.history = [norm0]
        self.red_round = 0
        self.red_pending = False
        self.red_value = 0.0
        self.tau = None
        self.done = False
        self.stop_reason = ""
        self.finish_time = 0.0
        self._corrected = False
        self.record = record
        self.record_iterates = record_iterates
        self.snapshots: dict[int, np.ndarray] = {}
        self.coarse_rhs: list[tuple[int, np.ndarray]] = []
        self.iterates: list[np.ndarray] = []
        self._trace = trace

    # -- bookkeeping ---------------------------------------------------------
    def _log(self, now, kind, detail=""):
        if self._trace is not None:
            self._trace.append((now, self.s, kind, detail))

    def view(self) -> dict[int, np.ndarray]:
        v = dict(self.copies)
        v[self.s] = self.x
        return v

    @property
    def two_level(self) -> bool:
        return self.cfg.two_level

    # -- fine communication ----------------------------------------------------
    def fine_init(self) -> FineRequests:
        slots = {r: self.mb.post_receives(r, self.s) for r in self.sources}
        return FineRequests(slots, {r: None for r in self.dests})

    def async_send(self, now: float) -> None:
        payload = self.x.copy()
        for r in self.dests:
            prev = self.fine.send[r]
            if prev is None or self.mb.send_done(prev, now):
                self.fine.send[r] = self.mb.isend_interface(self.s, r, payload, now)

    def async_recv(self, now: float) -> None:
        for r in self.sources:
            got = self.mb.poll_interface(r, self.s, now)
            if got:
                self.copies[r] = got[-1]

    def async_send_recv(self, now: float) -> None:
        self.async_send(now)
        self.async_recv(now)

    # -- ISYNC and coarse procedure ----------------------------------------------
    def isynchronize(self, local: np.ndarray, dests, sources, tag: str, now: float) -> IsyncRequest:
        req = self.isync.request
        if req is not None and req.tag == tag and not req.done:
            raise IsyncError(f"process {self.s}: ISYNC on {tag!r} already in flight")
        rnd = self.isync.round
        snap = local.copy()
        for r in dests:
            self.mb.isend(self.s, r, tag, rnd, snap, now)
        req = IsyncRequest(tag, rnd, list(sources), {self.s: snap})
        self.isync.request = req
        return req

    def isync_test(self, req: IsyncRequest, now: float) -> bool:
        if req.done:
            return True
        if self.mb.test(self.s, req.tag, req.round, req.sources, now):
            req.buffer.update(self.mb.collect(self.s, req.tag, req.round))
            req.done = True
        return req.done

    def _start_gather(self, tt: np.ndarray, now: float) -> None:
        st = self.isync
        st.tau_coarse = tt
        if self.cfg.coarse_layout == "replicated":
            for r in self.others:
                self.mb.isend(self.s, r, "tau", st.round, tt, now)
        elif self.s != self.cfg.root:
            self.mb.isend(self.s, self.cfg.root, "tau", st.round, tt, now)
        st.set_phase(2)

    def _gathered_rhs(self) -> np.ndarray:
        parts = self.mb.collect(self.s, "tau", self.isync.round)
        parts[self.s] = self.isync.tau_coarse
        return self.system.sum_components([parts[r] for r in range(self.p)])

    def _install(self, xt: np.ndarray, now: float) -> None:
        st = self.isync
        if st.installs:
            st.corrections.append(st.nbidentcorr)
        st.x_coarse = xt
        st.nbidentcorr = 0
        st.installs += 1
        st.request = None
        st.snapshot = None
        st.set_phase(0)
        st.round += 1
        self._log(now, "coarse_install", st.installs)

    def coarse_phase0(self, now: float) -> None:
        st = self.isync
        if st.phase != 0:
            return
        if self.cfg.isync == "xtau":
            req = self.isynchronize(self.x, self.others, self.others, "snap", now)
            st.snapshot = req.buffer
            if self.record:
                self.snapshots[st.round] = req.buffer[self.s]
            st.set_phase(1)
            self._log(now, "isync_start", st.round)
        else:
            tau = self.op.residual(self.view())
            self._start_gather(self.op.coarse_component(tau), now)
            self._log(now, "gather_start", st.round)

    def coarse_phase1(self, now: float) -> None:
        st = self.isync
        if st.phase != 1 or not self.isync_test(st.request, now):
            return
        self._log(now, "isync_done", st.round)
        tau = self.op.residual(st.snapshot)
        self._start_gather(self.op.coarse_component(tau), now)

    def coarse_phase2(self, now: float) -> None:
        st = self.isync
        if st.phase != 2:
            return
        root = self.cfg.root
        if self.cfg.coarse_layout == "replicated" or self.s == root:
            if not self.mb.test(self.s, "tau", st.round, self.others, now):
                return
            rhs = self._gathered_rhs()
            xt = self.system.coarse_solve(rhs)
            if self.record:
                self.coarse_rhs.append((st.round, rhs))
            if self.cfg.coarse_layout == "centralized":
                for r in self.others:
                    self.mb.isend(self.s, r, "xc", st.round, xt, now)
        else:
            if not self.mb.test(self.s, "xc", st.round, [root], now):
                return
            xt = self.mb.collect(self.s, "xc", st.round)[root]
        self._install(xt, now)

    def correct(self, now: float) -> None:
        st = self.isync
        self._corrected = False
        if self.cfg.scheme != "two_level_mult" or st.nbidentcorr >= self.cfg.zeta:
            return
        self.x = self.x + self.cfg.theta * self.op.correction(st.x_coarse)
        st.nbidentcorr += 1
        self._corrected = True
        self.async_send(now)

    def receive_after_correction(self, now: float) -> None:
        if self._corrected:
            self.async_recv(now)

    # -- fine update and residual -----------------------------------------------------
    def local_update(self, now: float) -> None:
        self.x = self.op.apply_f(self.view())
        st = self.isync
        if self.cfg.scheme == "two_level_add" and st.nbidentcorr < self.cfg.zeta:
            self.x = self.x + self.cfg.theta * self.op.correction(st.x_coarse)
            st.nbidentcorr += 1
        if self.record_iterates:
            self.iterates.append(self.x.copy())
        self.async_send(now)

    def residual_and_reduce(self, now: float) -> None:
        self.async_recv(now)
        self.tau = self.op.residual(self.view())
        self.k += 1
        if self.red_pending:
            if not self.mb.test(self.s, "red", self.red_round, self.others, now):
                return
            parts = self.mb.collect(self.s, "red", self.red_round)
            parts[self.s] = self.red_value
            total = 0.0
            for r in range(self.p):
                total += parts[r]
            self.norm = math.sqrt(total)
            self.history.append(self.norm)
        self.red_round += 1
        self.red_value = self.op.weighted_sq(self.tau)
        for r in self.others:
            self.mb.isend(self.s, r, "red", self.red_round, self.red_value, now)
        self.red_pending = True

    # -- control ------------------------------------------------------------------------
    def should_stop(self) -> bool:
        if self.norm <= self.cfg.epsilon:
            self.stop_reason = "converged"
        elif not math.isfinite(self.norm) or self.norm > self.cfg.divergence_factor * max(
                self.norm0, np.finfo(float).tiny):
            self.stop_reason = "diverged"
        elif self.k >= self.cfg.k_max:
            self.stop_reason = "k_max"
        else:
            return False
        return True

    def finish(self, now: float) -> None:
        self.done = True
        self.finish_time = now
        if self.isync.installs:
            self.isync.corrections.append(self.isync.nbidentcorr)
        self._log(now, "stop", self.stop_reason)

    def stage(self, i: int, now: float) -> bool:
        """Run stage ``i``; returns False when the process has stopped."""
        if i == 0:
            if self.should_stop():
                self.finish(now)
                return False
            self._log(now, "iter_start", self.k)
            if self.two_level:
                self.coarse_phase0(now)
        elif i == 1:
            self.coarse_phase1(now)
        elif i == 2:
            self.coarse_phase2(now)
        elif i == 3:
            self.correct(now)
        elif i == 4:
            self.receive_after_correction(now)
        elif i == 5:
            self.local_update(now)
        elif i == 6:
            self.residual_and_reduce(now)
        return True

    def stages(self) -> tuple[int, ...]:
        return tuple(range(N_STAGES)) if self.two_level else (0, 5, 6)
