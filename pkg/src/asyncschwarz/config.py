"""Solver configuration and run reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

SCHEMES = ("one_level", "two_level_mult", "two_level_add")
LAYOUTS = ("replicated", "centralized")
ISYNC_MODES = ("xtau", "tau")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class SolverKind:
    """Local or coarse solver: ``lu`` (direct) or ``cg`` with a relative tolerance."""

    kind: str = "lu"
    tol: float = 1e-9

    @classmethod
    def parse(cls, text: "str | SolverKind", field: str = "solver") -> "SolverKind":
        if isinstance(text, SolverKind):
            return text
        text = str(text).strip().lower()
        if text == "lu":
            return cls("lu")
        if text == "cg":
            return cls("cg")
        if text.startswith("cg:"):
            try:
                tol = float(text[3:])
            except ValueError:
                raise ConfigError(field, f"bad CG tolerance in {text!r}") from None
            if not tol > 0:
                raise ConfigError(field, "CG tolerance must be positive")
            return cls("cg", tol)
        raise ConfigError(field, f"expected 'lu' or 'cg:TOL', got {text!r}")

    def __str__(self) -> str:
        return "lu" if self.kind == "lu" else f"cg:{self.tol:g}"


def parse_zeta(value) -> float:
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("inf", "infinity", "none", "∞"):
            return math.inf
        try:
            value = int(v)
        except ValueError:
            raise ConfigError("zeta", f"expected an integer or 'inf', got {value!r}") from None
    if value is None:
        return math.inf
    if value != math.inf and (int(value) != value):
        raise ConfigError("zeta", "must be an integer or inf")
    return float(value)


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "two_level_mult"
    coarse_layout: str = "replicated"
    theta: float = 1.0
    zeta: float = math.inf
    epsilon: float = 1e-6
    k_max: int = 10_000
    local_solver: SolverKind = SolverKind("lu")
    coarse_solver: SolverKind = SolverKind("lu")
    isync: str = "xtau"
    root: int = 0
    nrcvreqs_per_neighb: int = 1
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError("scheme", f"expected one of {SCHEMES}, got {self.scheme!r}")
        if self.coarse_layout not in LAYOUTS:
            raise ConfigError("coarse_layout", f"expected one of {LAYOUTS}, got {self.coarse_layout!r}")
        if self.isync not in ISYNC_MODES:
            raise ConfigError("isync", f"expected one of {ISYNC_MODES}, got {self.isync!r}")
        # theta = 0 is accepted as "correction disabled"
        if not (self.theta >= 0 and math.isfinite(self.theta)):
            raise ConfigError("theta", "must be a finite nonnegative number")
        object.__setattr__(self, "zeta", parse_zeta(self.zeta))
        if self.zeta < 1:
            raise ConfigError("zeta", "must be at least 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", "must be positive")
        if int(self.k_max) != self.k_max or self.k_max < 0:
            raise ConfigError("k_max", "must be a nonnegative integer")
        if self.nrcvreqs_per_neighb < 1:
            raise ConfigError("nrcvreqs_per_neighb", "must be at least 1")
        object.__setattr__(self, "local_solver", SolverKind.parse(self.local_solver, "local_solver"))
        object.__setattr__(self, "coarse_solver", SolverKind.parse(self.coarse_solver, "coarse_solver"))

    @property
    def two_level(self) -> bool:
        return self.scheme != "one_level"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["zeta"] = "inf" if math.isinf(self.zeta) else int(self.zeta)
        d["local_solver"] = str(self.local_solver)
        d["coarse_solver"] = str(self.coarse_solver)
        return d


@dataclass
class RunReport:
    engine: str
    scheme: str
    iterations: float
    converged: bool
    final_residual: float
    residual_history: list[float] = field(default_factory=list)
    coarse_solves: float = 0.0
    identical_corrections_avg: float = 0.0
    sim_time: float = 0.0
    diverged: bool = False
    per_process_iterations: list[int] = field(default_factory=list)
    per_process_coarse_solves: list[int] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_timing: bool = True, include_wall: bool = False) -> dict[str, Any]:
        """Plain-dict view. Wall-clock entries of ``extra`` (keys starting
        with ``wall``) are dropped unless asked for, so that simulator
        reports are reproducible byte for byte; ``include_timing=False``
        also drops the simulated time."""
        d = asdict(self)
        d["extra"] = {k: v for k, v in d["extra"].items()
                      if include_wall or not k.startswith("wall")}
        if not include_timing:
            d.pop("sim_time")
        return d

    def to_json(self, include_timing: bool = True, include_wall: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing, include_wall), indent=2, sort_keys=True,
                          default=_jsonable)

    def write(self, out_dir: "str | Path") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json() + "\n")
        write_residual_csv(out / "residuals.csv", self.residual_history)


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def write_residual_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "residual"])
        for k, r in enumerate(history):
            w.writerow([k, repr(float(r))])
