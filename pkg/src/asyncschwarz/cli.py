"""
Command-line front end.

    asyncschwarz solve     --grid 16,16,16 --procs 2,2,2 --scheme mult --delays rand:3:0
    asyncschwarz sweep     --thetas 0.35,1 --zetas 1,3,5,inf --isync-modes xtau,tau
    asyncschwarz certify   --grid 6,6,6 --procs 2,2,2
    asyncschwarz imbalance --m 4 --zetas 8,inf

Settings come from built-in defaults, then an optional YAML/JSON file
(``--config``), then command-line flags, later sources winning. Exit codes:
0 converged, 1 diverged or hit ``k_max``, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import analysis
from .config import ConfigError, RunReport, SolverConfig, SolverKind, parse_zeta
from .decomposition import WEIGHT_STRATEGIES, build_coarse, partition_box
from .linalg import DEFAULT_DENSE_LIMIT, csr
from .problem import PoissonSpec, assemble_poisson
from .runtime.delays import DelaySchedule
from .runtime.simulator import Simulator
from .runtime.threaded import run_threaded
from .subdomains import SchwarzSystem
from .sync import solve_sync

log = logging.getLogger("asyncschwarz")

CSV_VERSION = 1
SCHEME_ALIASES = {"one": "one_level", "mult": "two_level_mult", "add": "two_level_add",
                  "one_level": "one_level", "two_level_mult": "two_level_mult", "two_level_add": "two_level_add"}
ENGINES = ("sync", "sim", "threads")

SWEEP_FIELDS = ["isync", "theta", "zeta", "rep", "seed", "iterations", "k_over_c", "coarse_solves",
                "final_residual", "sim_ticks", "converged", "status"]


@dataclass
class ExperimentConfig:
    grid: tuple[int, int, int] = (8, 8, 8)
    source: float = 4590.0
    reduced: bool = False
    procs: tuple[int, int, int] = (2, 2, 2)
    overlap: int = 2
    weights: str = "multiplicity"
    solver: SolverConfig = field(default_factory=SolverConfig)
    engine: str = "sim"
    delays: str = "zero"
    out: str = "out"
    repetitions: int = 1
    seed: int = 0
    trace: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions", "must be at least 1")
        if self.engine not in ENGINES:
            raise ConfigError("engine", f"expected one of {ENGINES}, got {self.engine!r}")
        if self.weights not in WEIGHT_STRATEGIES:
            raise ConfigError("weights", f"expected one of {WEIGHT_STRATEGIES}, got {self.weights!r}")
        if self.overlap < 0:
            raise ConfigError("overlap", "must be nonnegative")

    def delay_schedule(self, seed: int | None = None) -> DelaySchedule:
        try:
            sched = DelaySchedule.parse(self.delays)
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise ConfigError("delays", str(exc)) from None
        if seed is not None and sched.mode == "random":
            sched = replace(sched, seed=seed)
        return sched

    def describe(self) -> dict:
        return {
            "grid": list(self.grid), "source": self.source, "reduced": self.reduced,
            "procs": list(self.procs), "overlap": self.overlap, "weights": self.weights,
            "engine": self.engine, "delays": self.delays, "repetitions": self.repetitions, "seed": self.seed,
        }


# -- parsing helpers -------------------------------------------------------------

def _triple(value, name: str) -> tuple[int, int, int]:
    if isinstance(value, str):
        parts = value.replace("x", ",").split(",")
    else:
        parts = list(value)
    try:
        out = tuple(int(p) for p in parts)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected three integers, got {value!r}") from None
    if len(out) != 3 or min(out) < 1:
        raise ConfigError(name, f"expected three positive integers, got {value!r}")
    return out


def _floats(text: str, name: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(name, f"bad number list {text!r}") from None
    if not vals:
        raise ConfigError(name, "list is empty")
    return vals


def _zetas(text: str) -> list[float]:
    vals = [parse_zeta(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise ConfigError("zetas", "list is empty")
    return vals


def _fmt_zeta(z: float) -> str:
    return "inf" if math.isinf(z) else str(int(z))


def load_config_file(path) -> dict:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    flat = {}
    for key, val in data.items():
        if isinstance(val, dict) and key in ("problem", "decomposition", "solver", "run"):
            flat.update(val)
        else:
            flat[key] = val
    return flat


_SOLVER_KEYS = {
    "scheme": "scheme", "layout": "coarse_layout", "theta": "theta", "zeta": "zeta", "eps": "epsilon",
    "kmax": "k_max", "isync": "isync", "local": "local_solver", "coarse": "coarse_solver", "root": "root",
    "nrecv": "nrcvreqs_per_neighb",
}
_FILE_ALIASES = {"epsilon": "eps", "k_max": "kmax", "coarse_layout": "layout", "local_solver": "local",
                 "coarse_solver": "coarse", "nrcvreqs_per_neighb": "nrecv", "weight_strategy": "weights"}
_EXPERIMENT_KEYS = {"grid", "source", "reduced", "procs", "overlap", "weights", "engine", "delays", "out",
                    "repetitions", "seed", "trace"}


def build_experiment(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, the config file and explicit flags (flags win)."""
    merged: dict = {}
    if getattr(args, "config", None):
        for key, val in load_config_file(args.config).items():
            key = _FILE_ALIASES.get(key, key)
            if key not in _SOLVER_KEYS and key not in _EXPERIMENT_KEYS:
                raise ConfigError(key, "unknown configuration key")
            merged[key] = val
    for key in list(_SOLVER_KEYS) + sorted(_EXPERIMENT_KEYS):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val

    solver_kw = {}
    for key, target in _SOLVER_KEYS.items():
        if key not in merged:
            continue
        val = merged[key]
        if key == "scheme":
            if str(val) not in SCHEME_ALIASES:
                raise ConfigError("scheme", f"expected one|mult|add, got {val!r}")
            val = SCHEME_ALIASES[str(val)]
        elif key in ("theta", "eps"):
            try:
                val = float(val)
            except (TypeError, ValueError):
                raise ConfigError(target, f"not a number: {val!r}") from None
        elif key in ("kmax", "root", "nrecv"):
            try:
                val = int(val)
            except (TypeError, ValueError):
                raise ConfigError(target, f"not an integer: {val!r}") from None
        elif key in ("local", "coarse"):
            val = SolverKind.parse(str(val), target)
        solver_kw[target] = val
    solver = SolverConfig(**solver_kw)

    kw = {k: merged[k] for k in _EXPERIMENT_KEYS if k in merged}
    if "grid" in kw:
        kw["grid"] = _triple(kw["grid"], "grid")
    if "procs" in kw:
        kw["procs"] = _triple(kw["procs"], "procs")
    for key, typ in (("overlap", int), ("repetitions", int), ("seed", int), ("source", float)):
        if key in kw:
            try:
                kw[key] = typ(kw[key])
            except (TypeError, ValueError):
                raise ConfigError(key, f"bad value {kw[key]!r}") from None
    for key in ("reduced", "trace"):
        if key in kw:
            kw[key] = bool(kw[key])
    if "delays" in kw:
        kw["delays"] = str(kw["delays"])
    exp = ExperimentConfig(solver=solver, **kw)
    if solver.root >= int(np.prod(exp.procs)):
        raise ConfigError("root", f"root {solver.root} out of range for {int(np.prod(exp.procs))} processes")
    return exp


# -- problem construction ------------------------------------------------------------

def build_system(exp: ExperimentConfig, solver: SolverConfig | None = None) -> SchwarzSystem:
    solver = solver or exp.solver
    try:
        A, b = assemble_poisson(PoissonSpec(exp.grid, exp.source, exp.reduced))
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None
    try:
        d = partition_box(exp.grid, exp.procs, exp.overlap, exp.weights)
    except ValueError as exc:
        raise ConfigError("procs", str(exc)) from None
    coarse = build_coarse(d, A)
    return SchwarzSystem(A, b, d, coarse, solver.local_solver, solver.coarse_solver)


def run_once(system: SchwarzSystem, solver: SolverConfig, exp: ExperimentConfig,
             delays: DelaySchedule, trace_path=None) -> tuple[np.ndarray, RunReport]:
    if exp.engine == "sync":
        slow = [delays.slowdown_of(s) for s in range(system.p)]
        return solve_sync(system, solver, slowdown=slow, latency=delays.bound)
    if exp.engine == "threads":
        return run_threaded(system, solver, delays=delays)
    sim = Simulator(system, solver, delays, trace=trace_path is not None)
    out = sim.run()
    if trace_path is not None:
        sim.write_trace(trace_path)
    return out


def _exit_code(report: RunReport) -> int:
    return 0 if report.converged else 1


def _out_dir(exp: ExperimentConfig) -> Path:
    out = Path(exp.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("out", str(exc)) from None
    return out


def _write_csv(path: Path, kind: str, fields: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    buf.write(f"# asyncschwarz {kind} v{CSV_VERSION}\n")
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    path.write_text(buf.getvalue())


# -- commands ------------------------------------------------------------------------------

def cmd_solve(exp: ExperimentConfig) -> int:
    out = _out_dir(exp)
    system = build_system(exp)
    delays = exp.delay_schedule()
    trace = out / "trace.csv" if exp.trace and exp.engine == "sim" else None
    _, report = run_once(system, exp.solver, exp, delays, trace)
    report.extra["experiment"] = exp.describe()
    report.extra["decomposition"] = system.decomposition.summary()
    report.write(out)
    log.info("%s %s: k=%.1f converged=%s residual=%.3e", report.engine, report.scheme, report.iterations,
             report.converged, report.final_residual)
    return _exit_code(report)


def sweep_rows(exp: ExperimentConfig, thetas, zetas, isync_modes) -> list[dict]:
    system = build_system(exp)
    rows = []
    for mode in isync_modes:
        for theta in thetas:
            for zeta in zetas:
                for rep in range(exp.repetitions):
                    seed = exp.seed + rep
                    row = {"isync": mode, "theta": repr(float(theta)), "zeta": _fmt_zeta(zeta), "rep": rep,
                           "seed": seed}
                    try:
                        solver = replace(exp.solver, theta=theta, zeta=zeta, isync=mode)
                        _, r = run_once(system, solver, exp, exp.delay_schedule(seed))
                        row.update(iterations=repr(r.iterations), k_over_c=repr(r.identical_corrections_avg),
                                   coarse_solves=repr(r.coarse_solves), final_residual=repr(r.final_residual),
                                   sim_ticks=repr(r.sim_time), converged=int(r.converged),
                                   status="diverged" if r.diverged else ("ok" if r.converged else "k_max"))
                    except ConfigError:
                        raise
                    except Exception as exc:  # recorded, the sweep goes on
                        row.update(iterations="", k_over_c="", coarse_solves="", final_residual="",
                                   sim_ticks="", converged=0, status=f"error: {exc}")
                    rows.append(row)
    return rows


def cmd_sweep(exp: ExperimentConfig, thetas, zetas, isync_modes) -> int:
    if not thetas or not zetas or not isync_modes:
        raise ConfigError("sweep", "theta, zeta and isync lists must be nonempty")
    out = _out_dir(exp)
    rows = sweep_rows(exp, thetas, zetas, isync_modes)
    _write_csv(out / "sweep.csv", "sweep", SWEEP_FIELDS, rows)
    return 0


def cmd_certify(exp: ExperimentConfig, flip_sign: bool = False, matrix: str | None = None,
                dense_limit: int = DEFAULT_DENSE_LIMIT, theta_grid=analysis.DEFAULT_THETA_GRID) -> int:
    out = _out_dir(exp)
    n = int(np.prod(exp.grid))
    if n > dense_limit:
        raise ConfigError("grid", f"{n} unknowns exceed the dense limit {dense_limit}")
    A, _ = assemble_poisson(PoissonSpec(exp.grid, exp.source, exp.reduced))
    if matrix is not None:
        from .linalg import read_matrix_market
        A = read_matrix_market(matrix)
        if A.shape != (n, n):
            raise ConfigError("matrix", f"shape {A.shape} does not match grid with {n} unknowns")
    if flip_sign:
        diag = A.diagonal()
        A = csr(-A + 2 * np.diag(diag)) if n <= dense_limit else A
    try:
        d = partition_box(exp.grid, exp.procs, exp.overlap, exp.weights)
    except ValueError as exc:
        raise ConfigError("procs", str(exc)) from None
    bundle = analysis.build_operators(A, d, build_coarse(d, A), dense_limit=dense_limit,
                                      description={**exp.describe(), "flip_sign": flip_sign, "matrix": matrix})
    cert = analysis.certificate(bundle, theta_grid=theta_grid)
    (out / "certificate.json").write_text(analysis.certificate_json(cert) + "\n")
    return 0


def imbalance_rows(exp: ExperimentConfig, m: int, zetas) -> list[dict]:
    p = int(np.prod(exp.procs))
    if not 1 <= m <= p:
        raise ConfigError("m", f"need 1 <= m <= p = {p}")
    system = build_system(exp)
    delays = DelaySchedule.groups(p, m, exp.delay_schedule())
    group = [int(delays.slowdown_of(s)) for s in range(p)]
    rows = []
    variants = [("sync", None)] + [("async", z) for z in zetas]
    for kind, zeta in variants:
        solver = exp.solver if zeta is None else replace(exp.solver, zeta=zeta)
        if kind == "sync":
            _, r = solve_sync(system, solver, slowdown=list(delays.slowdown), latency=delays.bound)
        else:
            _, r = Simulator(system, solver, delays).run()
        row = {"variant": kind, "zeta": "" if zeta is None else _fmt_zeta(zeta), "m": m,
               "iterations": repr(r.iterations), "sim_ticks": repr(r.sim_time),
               "final_residual": repr(r.final_residual), "converged": int(r.converged)}
        for g in range(1, m + 1):
            members = [s for s in range(p) if group[s] == g]
            ratios = [r.per_process_iterations[s] / r.per_process_coarse_solves[s]
                      for s in members if r.per_process_coarse_solves[s]]
            row[f"k_over_c_g{g}"] = repr(float(np.mean(ratios))) if ratios else ""
        rows.append(row)
    return rows


def cmd_imbalance(exp: ExperimentConfig, m: int, zetas) -> int:
    out = _out_dir(exp)
    rows = imbalance_rows(exp, m, zetas)
    fields = ["variant", "zeta", "m", "iterations", "sim_ticks", "final_residual", "converged"]
    fields += [f"k_over_c_g{g}" for g in range(1, m + 1)]
    _write_csv(out / "imbalance.csv", "imbalance", fields, rows)
    return 0 if all(int(r["converged"]) for r in rows) else 1


# -- argument parsing -------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("problem and decomposition")
    g.add_argument("--config", help="YAML or JSON settings file")
    g.add_argument("--grid", help="interior grid NX,NY,NZ")
    g.add_argument("--source", type=float, help="uniform source value")
    g.add_argument("--reduced", action="store_const", const=True,
                   help="drop singleton directions (true 1-D/2-D Laplacian)")
    g.add_argument("--procs", help="process grid PX,PY,PZ")
    g.add_argument("--overlap", type=int, help="overlap in mesh steps")
    g.add_argument("--weights", choices=WEIGHT_STRATEGIES, help="partition-of-unity weights")
    s = p.add_argument_group("solver")
    s.add_argument("--scheme", choices=["one", "mult", "add"])
    s.add_argument("--layout", choices=["replicated", "centralized"])
    s.add_argument("--theta", help="coarse correction damping")
    s.add_argument("--zeta", help="max identical corrections (integer or inf)")
    s.add_argument("--eps", help="stopping tolerance on the weighted residual norm")
    s.add_argument("--kmax", help="iteration limit")
    s.add_argument("--isync", choices=["xtau", "tau"])
    s.add_argument("--local", help="local solver: lu or cg:TOL")
    s.add_argument("--coarse", help="coarse solver: lu or cg:TOL")
    s.add_argument("--root", help="root process of the centralized layout")
    s.add_argument("--nrecv", help="reception slots per neighbour")
    r = p.add_argument_group("run")
    r.add_argument("--engine", choices=ENGINES)
    r.add_argument("--delays", help="zero | fixed:D | rand:MAX:SEED | JSON file")
    r.add_argument("--seed", type=int)
    r.add_argument("--repetitions", "--reps", dest="repetitions", type=int)
    r.add_argument("--out", help="output directory")
    r.add_argument("-v", "--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asyncschwarz",
                                     description="Two-level asynchronous Schwarz solvers and experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one solver configuration")
    _common(p)
    p.add_argument("--trace", action="store_const", const=True, help="write trace.csv (simulator only)")

    p = sub.add_parser("sweep", help="theta x zeta x ISYNC-variant sweep")
    _common(p)
    p.add_argument("--thetas", default="1", help="comma-separated damping values")
    p.add_argument("--zetas", default="inf", help="comma-separated zeta values")
    p.add_argument("--isync-modes", default=None, help="comma-separated: xtau,tau (default: --isync)")

    p = sub.add_parser("certify", help="dense convergence certificate")
    _common(p)
    p.add_argument("--flip-sign", action="store_true", help="negate off-diagonal entries of A")
    p.add_argument("--matrix", help="Matrix Market file replacing the Poisson matrix")
    p.add_argument("--dense-limit", type=int, default=DEFAULT_DENSE_LIMIT)
    p.add_argument("--theta-grid", default=None, help="comma-separated damping grid")

    p = sub.add_parser("imbalance", help="slow down m process groups by factors 1..m")
    _common(p)
    p.add_argument("--m", type=int, required=True, help="number of groups")
    p.add_argument("--zetas", default="inf", help="comma-separated zeta values for the async runs")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        exp = build_experiment(args)
        if args.command == "solve":
            return cmd_solve(exp)
        if args.command == "sweep":
            modes = (args.isync_modes or exp.solver.isync).split(",")
            for mode in modes:
                if mode not in ("xtau", "tau"):
                    raise ConfigError("isync", f"unknown ISYNC mode {mode!r}")
            return cmd_sweep(exp, _floats(args.thetas, "theta"), _zetas(args.zetas), modes)
        if args.command == "certify":
            grid = analysis.DEFAULT_THETA_GRID if args.theta_grid is None else _floats(args.theta_grid, "theta_grid")
            return cmd_certify(exp, args.flip_sign, args.matrix, args.dense_limit, grid)
        if args.command == "imbalance":
            return cmd_imbalance(exp, args.m, _zetas(args.zetas))
    except ConfigError as exc:
        print(f"asyncschwarz: configuration error: {exc}", file=sys.stderr)
        return 2
    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
