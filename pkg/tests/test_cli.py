import csv
import json

import numpy as np
import pytest

from asyncschwarz.cli import main

BASE = ["--grid", "8,8,8", "--procs", "2,2,2", "--overlap", "1"]


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# asyncschwarz ") and lines[0].endswith(" v1")
    return list(csv.DictReader(lines[1:]))


def report(path):
    return json.loads((path / "report.json").read_text())


def test_solve_one_level_sync(tmp_path):
    assert main(["solve", *BASE, "--scheme", "one", "--engine", "sync", "--out", str(tmp_path)]) == 0
    r = report(tmp_path)
    assert r["converged"] and r["scheme"] == "one_level"
    rows = (tmp_path / "residuals.csv").read_text().splitlines()
    assert rows[0] == "k,residual" and len(rows) == int(r["iterations"]) + 2


def test_async_zero_delay_matches_sync(tmp_path):
    assert main(["solve", *BASE, "--engine", "sync", "--out", str(tmp_path / "s")]) == 0
    assert main(["solve", *BASE, "--engine", "sim", "--delays", "zero", "--out", str(tmp_path / "a")]) == 0
    s, a = report(tmp_path / "s"), report(tmp_path / "a")
    for key in ("scheme", "converged", "diverged", "residual_history", "config"):
        assert s[key] == a[key], key
    # the pipelined norm reduction lets every process run one extra iteration
    assert a["iterations"] == s["iterations"] + 1
    assert a["final_residual"] <= s["final_residual"]


def test_trace_written(tmp_path):
    assert main(["solve", *BASE, "--weights", "restricted", "--delays", "rand:2:1", "--trace",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trace.csv").read_text().startswith("tick,process,event,detail")


@pytest.mark.parametrize("args,field", [
    (["--theta", "abc"], "theta"), (["--grid", "8,8"], "grid"), (["--zeta", "0"], "zeta"),
    (["--local", "qr"], "local_solver"), (["--procs", "9,1,1"], "procs"), (["--root", "8"], "root"),
    (["--delays", "rand:2"], "delays"), (["--repetitions", "0"], "repetitions"),
])
def test_config_errors_exit_2(tmp_path, capsys, args, field):
    argv = ["solve", *BASE, *args, "--out", str(tmp_path)]
    if args[0] == "--grid":
        argv = ["solve", *args, "--out", str(tmp_path)]
    assert main(argv) == 2
    assert field in capsys.readouterr().err


def test_kmax_exit_1(tmp_path):
    assert main(["solve", *BASE, "--kmax", "3", "--out", str(tmp_path)]) == 1
    assert not report(tmp_path)["converged"]


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("problem: {grid: [6, 6, 6]}\n"
                   "decomposition: {procs: [2, 2, 1], overlap: 1, weights: restricted}\n"
                   "solver: {scheme: add, theta: 0.5, zeta: 4}\nrun: {engine: sync}\n")
    assert main(["solve", "--config", str(cfg), "--theta", "0.75", "--out", str(tmp_path / "o")]) == 0
    r = report(tmp_path / "o")
    assert r["engine"] == "sync" and r["scheme"] == "two_level_add"
    assert r["config"]["theta"] == 0.75 and r["config"]["zeta"] == 4
    assert r["extra"]["decomposition"]["weight_strategy"] == "restricted"
    bad = tmp_path / "bad.yaml"
    bad.write_text("solver: {nonsense: 1}\n")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "b")]) == 2


def test_sweep_rows_and_determinism(tmp_path):
    args = ["sweep", *BASE, "--weights", "restricted", "--delays", "rand:3:0", "--thetas", "0.35,1",
            "--zetas", "1,3,5,inf", "--reps", "1"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "sweep.csv")
    assert len(rows) == 8
    assert {(r["theta"], r["zeta"]) for r in rows} == {(t, z) for t in ("0.35", "1.0") for z in ("1", "3", "5", "inf")}
    for r in rows:
        assert r["status"] == "ok" and float(r["final_residual"]) <= 1e-5


def test_sweep_single_row_and_isync_labels(tmp_path):
    assert main(["sweep", *BASE, "--weights", "restricted", "--out", str(tmp_path / "one")]) == 0
    assert len(read_csv(tmp_path / "one" / "sweep.csv")) == 1
    assert main(["sweep", *BASE, "--weights", "restricted", "--isync-modes", "xtau,tau",
                 "--out", str(tmp_path / "two")]) == 0
    rows = read_csv(tmp_path / "two" / "sweep.csv")
    assert [r["isync"] for r in rows] == ["xtau", "tau"]


def test_sweep_records_failures(tmp_path):
    # multiplicity weights under delays may blow up; failures become rows, the sweep goes on
    assert main(["sweep", *BASE, "--delays", "rand:3:0", "--thetas", "1", "--zetas", "inf", "--kmax", "300",
                 "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert len(rows) == 1 and rows[0]["status"] in ("ok", "k_max", "diverged")


def test_certify(tmp_path):
    assert main(["certify", "--grid", "6,6,6", "--procs", "2,2,2", "--out", str(tmp_path / "c")]) == 0
    cert = json.loads((tmp_path / "c" / "certificate.json").read_text())
    assert cert["m_matrix"] == "yes"
    for key in ("one_level", "shared_condition", "lemma_condition", "sync_two_level"):
        assert cert[key]["convergent"], key
    assert cert["damping"]["theta"] == 1.0


def test_certify_single_process(tmp_path):
    assert main(["certify", "--grid", "5,5,5", "--procs", "1,1,1", "--out", str(tmp_path)]) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    for key in ("one_level", "shared_condition", "lemma_condition", "sync_two_level", "sync_one_level"):
        assert cert[key]["rho"] <= 1e-12


def test_certify_flipped_sign(tmp_path):
    assert main(["certify", "--grid", "4,4,4", "--procs", "2,2,1", "--flip-sign", "--out", str(tmp_path)]) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["m_matrix"] == "no"
    assert np.isfinite(cert["one_level"]["rho"]) and np.isfinite(cert["lemma_condition"]["rho"])


def test_certify_dense_limit(tmp_path, capsys):
    assert main(["certify", "--grid", "20,20,20", "--procs", "2,2,2", "--out", str(tmp_path)]) == 2
    assert "dense limit" in capsys.readouterr().err


def test_imbalance_single_group_matches_solve(tmp_path):
    common = [*BASE, "--weights", "restricted", "--delays", "fixed:2"]
    assert main(["imbalance", *common, "--m", "1", "--out", str(tmp_path / "i")]) == 0
    assert main(["solve", *common, "--out", str(tmp_path / "s")]) == 0
    rows = read_csv(tmp_path / "i" / "imbalance.csv")
    asy = [r for r in rows if r["variant"] == "async"][0]
    s = report(tmp_path / "s")
    assert float(asy["iterations"]) == s["iterations"]
    assert float(asy["sim_ticks"]) == s["sim_time"]
    assert float(asy["final_residual"]) == s["final_residual"]


def test_imbalance_groups(tmp_path):
    args = ["imbalance", "--grid", "12,12,12", "--procs", "2,2,2", "--overlap", "1", "--weights", "restricted",
            "--delays", "fixed:3", "--m", "4", "--zetas", "8,inf"]
    assert main([*args, "--out", str(tmp_path)]) == 0
    rows = {(r["variant"], r["zeta"]): r for r in read_csv(tmp_path / "imbalance.csv")}
    z8, zinf = rows[("async", "8")], rows[("async", "inf")]
    assert float(z8["sim_ticks"]) <= float(zinf["sim_ticks"])
    # faster (underloaded) groups apply each coarse solution more often
    kc = [float(zinf[f"k_over_c_g{g}"]) for g in range(1, 5)]
    assert kc == sorted(kc, reverse=True) and kc[0] > kc[-1]
    assert main(["imbalance", *BASE, "--m", "9", "--out", str(tmp_path / "bad")]) == 2
