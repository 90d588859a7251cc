"""
Point-to-point message layer shared by the simulator and the threaded engine.

Two kinds of traffic go through a :class:`Mailbox`:

* interface messages (the fine exchange) travel on per-link FIFO channels
  with a bounded number of reception slots. A send is complete once a slot
  has matched it, which mirrors synchronous-mode sends: the sender does not
  start a new send on a link before the previous one was matched.
* tagged messages carry the pieces of the non-blocking collectives
  (snapshot exchange, gathers, broadcasts, reductions). They are keyed by
  ``(tag, round)`` at the receiver and never overwritten.

Time is whatever the engine says it is: logical ticks in the simulator,
``time.monotonic()`` in the threaded engine.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable


@dataclass(eq=False)
class Message:
    src: int
    dst: int
    payload: Any
    sent: float
    arrival: float
    matched: bool = False
    tag: str = ""
    round: int = 0


@dataclass(eq=False)
class Link:
    """FIFO channel from one sender to one receiver with ``nslots`` reception slots."""

    nslots: int
    queue: deque = field(default_factory=deque)
    matched: list = field(default_factory=list)

    def advance(self, now: float) -> None:
        while self.queue and self.queue[0].arrival <= now and len(self.matched) < self.nslots:
            msg = self.queue.popleft()
            msg.matched = True
            self.matched.append(msg)


class Mailbox:
    """Message store for ``p`` processes.

    ``latency(src, dst)`` returns the transit time of the next message on a
    link. Arrival times on a link never decrease, so delivery is FIFO.
    """

    def __init__(self, p: int, nslots: int = 1, latency: Callable[[int, int], float] | None = None,
                 threadsafe: bool = False):
        if nslots < 1:
            raise ValueError("nslots must be at least 1")
        self.p = p
        self.nslots = nslots
        self._latency = latency or (lambda src, dst: 0.0)
        self._links: dict[tuple[int, int], Link] = {}
        self._last_arrival: dict[tuple[int, int], float] = {}
        self._boards: list[dict[tuple[str, int], dict[int, Message]]] = [{} for _ in range(p)]
        self._lock = threading.Lock() if threadsafe else None
        self.sent_count = 0

    # -- helpers -------------------------------------------------------
    def _arrival(self, src: int, dst: int, now: float) -> float:
        t = max(now + self._latency(src, dst), self._last_arrival.get((src, dst), now))
        self._last_arrival[(src, dst)] = t
        return t

    def link(self, src: int, dst: int) -> Link:
        key = (src, dst)
        if key not in self._links:
            self._links[key] = Link(self.nslots)
        return self._links[key]

    def _locked(self):
        return self._lock if self._lock is not None else _NULL

    # -- interface traffic -----------------------------------------------
    def post_receives(self, src: int, dst: int) -> int:
        """Create the link ``src -> dst`` and return the number of posted slots."""
        with self._locked():
            return self.link(src, dst).nslots

    def isend_interface(self, src: int, dst: int, payload, now: float) -> Message:
        with self._locked():
            msg = Message(src, dst, payload, now, self._arrival(src, dst, now))
            self.link(src, dst).queue.append(msg)
            self.sent_count += 1
            return msg

    def send_done(self, msg: Message, now: float) -> bool:
        with self._locked():
            if not msg.matched:
                self.link(msg.src, msg.dst).advance(now)
            return msg.matched

    def poll_interface(self, src: int, dst: int, now: float) -> list:
        """Payloads matched on ``src -> dst`` in send order; the slots are re-posted."""
        with self._locked():
            link = self.link(src, dst)
            link.advance(now)
            out = [m.payload for m in link.matched]
            link.matched.clear()
            link.advance(now)
            return out

    def pending(self, src: int, dst: int) -> int:
        """Interface messages on the link not yet consumed by the receiver."""
        with self._locked():
            link = self._links.get((src, dst))
            return 0 if link is None else len(link.queue) + len(link.matched)

    # -- tagged traffic ------------------------------------------------------
    def isend(self, src: int, dst: int, tag: str, rnd: int, payload, now: float) -> Message:
        with self._locked():
            msg = Message(src, dst, payload, now, self._arrival(src, dst, now), tag=tag, round=rnd)
            slot = self._boards[dst].setdefault((tag, rnd), {})
            if src in slot:
                raise RuntimeError(f"duplicate {tag!r} message for round {rnd} from {src} to {dst}")
            slot[src] = msg
            self.sent_count += 1
            return msg

    def test(self, dst: int, tag: str, rnd: int, sources: Iterable[int], now: float) -> bool:
        """True once a ``(tag, rnd)`` message from every source has arrived at ``dst``."""
        with self._locked():
            slot = self._boards[dst].get((tag, rnd), {})
            for src in sources:
                msg = slot.get(src)
                if msg is None or msg.arrival > now:
                    return False
            return True

    def collect(self, dst: int, tag: str, rnd: int) -> dict[int, Any]:
        with self._locked():
            slot = self._boards[dst].pop((tag, rnd), {})
            return {src: m.payload for src, m in slot.items()}

    def next_arrival(self, now: float) -> float | None:
        """Earliest arrival strictly after ``now`` among undelivered messages."""
        with self._locked():
            times = [m.arrival for link in self._links.values() for m in link.queue if m.arrival > now]
            times += [m.arrival for board in self._boards for slot in board.values()
                      for m in slot.values() if m.arrival > now]
            return min(times) if times else None


class _NullLock:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


_NULL = _NullLock()
