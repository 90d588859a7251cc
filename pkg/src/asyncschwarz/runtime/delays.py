"""Programmable communication delays and process speeds for the simulator."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODES = ("zero", "fixed", "random", "script")


@dataclass(frozen=True)
class DelaySchedule:
    """Message latencies and per-process step costs, in simulator ticks.

    ``zero``: every message arrives in the tick it was sent.
    ``fixed``: every message takes ``delay`` ticks.
    ``random``: integer latencies drawn uniformly from ``[0, max_delay]``.
    ``script``: per-link latencies from ``links`` (``(src, dst) -> ticks``),
    ``default_delay`` elsewhere.

    A process iteration costs its ``slowdown`` factor (1 when unset). With
    ``skip_prob > 0`` a process additionally idles one tick at a time with
    that probability, never more than ``max_skip`` consecutive ticks, which
    varies the set of processes active at a given tick.
    """

    mode: str = "zero"
    delay: float = 0.0
    max_delay: int = 0
    seed: int = 0
    slowdown: tuple[float, ...] = ()
    links: dict = field(default_factory=dict)
    default_delay: float = 0.0
    skip_prob: float = 0.0
    max_skip: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown delay mode {self.mode!r}")
        if self.delay < 0 or self.max_delay < 0 or self.default_delay < 0:
            raise ValueError("delays must be nonnegative")
        if any(not (f >= 1 and math.isfinite(f)) for f in self.slowdown):
            raise ValueError("slowdown factors must be finite and >= 1")
        if not 0 <= self.skip_prob < 1:
            raise ValueError("skip_prob must lie in [0, 1)")
        if self.skip_prob > 0 and self.max_skip < 1:
            raise ValueError("max_skip must be positive when skip_prob > 0")
        object.__setattr__(self, "slowdown", tuple(float(f) for f in self.slowdown))
        object.__setattr__(self, "links", {tuple(map(int, k)): float(v) for k, v in dict(self.links).items()})

    @classmethod
    def zero(cls, slowdown=()) -> "DelaySchedule":
        return cls("zero", slowdown=tuple(slowdown))

    @classmethod
    def fixed(cls, delay: float, slowdown=()) -> "DelaySchedule":
        return cls("fixed", delay=delay, slowdown=tuple(slowdown))

    @classmethod
    def random(cls, max_delay: int, seed: int, slowdown=(), **kw) -> "DelaySchedule":
        return cls("random", max_delay=int(max_delay), seed=int(seed), slowdown=tuple(slowdown), **kw)

    @classmethod
    def random_heterogeneous(cls, p: int, max_delay: int, seed: int, max_slowdown: float = 4.0,
                             **kw) -> "DelaySchedule":
        """Random latencies plus per-process slowdowns drawn from ``[1, max_slowdown]``."""
        rng = np.random.default_rng([seed, 7919])
        slow = tuple(float(v) for v in np.round(rng.uniform(1.0, max_slowdown, size=p), 3))
        return cls.random(max_delay, seed, slowdown=slow, **kw)

    @classmethod
    def groups(cls, p: int, m: int, base: "DelaySchedule | None" = None) -> "DelaySchedule":
        """Split processes into ``m`` contiguous groups slowed down by 1..m."""
        if not 1 <= m <= p:
            raise ValueError("need 1 <= m <= p")
        slow = tuple(float(1 + (s * m) // p) for s in range(p))
        base = base or cls()
        return cls(base.mode, base.delay, base.max_delay, base.seed, slow, base.links,
                   base.default_delay, base.skip_prob, base.max_skip)

    def slowdown_of(self, s: int) -> float:
        return self.slowdown[s] if s < len(self.slowdown) else 1.0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def latency(self, src: int, dst: int, rng: np.random.Generator) -> float:
        if self.mode == "zero":
            return 0.0
        if self.mode == "fixed":
            return float(self.delay)
        if self.mode == "random":
            return float(rng.integers(0, self.max_delay + 1)) if self.max_delay else 0.0
        return self.links.get((src, dst), self.default_delay)

    @property
    def bound(self) -> float:
        """Largest latency any message can see."""
        if self.mode == "zero":
            return 0.0
        if self.mode == "fixed":
            return float(self.delay)
        if self.mode == "random":
            return float(self.max_delay)
        return max([self.default_delay, *self.links.values()])

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "delay": self.delay,
            "max_delay": self.max_delay,
            "seed": self.seed,
            "slowdown": list(self.slowdown),
            "links": [[s, r, v] for (s, r), v in sorted(self.links.items())],
            "default_delay": self.default_delay,
            "skip_prob": self.skip_prob,
            "max_skip": self.max_skip,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DelaySchedule":
        data = dict(data)
        links = data.pop("links", {})
        if isinstance(links, list):
            links = {(int(s), int(r)): float(v) for s, r, v in links}
        else:
            parsed = {}
            for key, v in links.items():
                src, dst = (int(t) for t in str(key).replace("->", ",").split(","))
                parsed[(src, dst)] = float(v)
            links = parsed
        mode = data.pop("mode", "script" if links else "zero")
        return cls(mode=mode, links=links, **{k: v for k, v in data.items() if k in _FIELDS})

    @classmethod
    def load(cls, path) -> "DelaySchedule":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def parse(cls, text: str) -> "DelaySchedule":
        """``zero``, ``fixed:D``, ``rand:MAX:SEED`` or a JSON file path."""
        text = text.strip()
        if text == "zero":
            return cls.zero()
        if text.startswith("fixed:"):
            return cls.fixed(float(text.split(":", 1)[1]))
        if text.startswith("rand:"):
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError(f"expected rand:MAX:SEED, got {text!r}")
            return cls.random(int(parts[1]), int(parts[2]))
        return cls.load(text)


_FIELDS = {"delay", "max_delay", "seed", "slowdown", "default_delay", "skip_prob", "max_skip"}
