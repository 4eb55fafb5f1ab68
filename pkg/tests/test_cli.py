from __future__ import annotations

import csv
import json
import os

import pytest

from riskbroker.cli import EXIT_CONFIG, EXIT_OK, RunManifest, main

TINY = """
[trace]
profile = dataset1
horizon = 2d

[pricing]
contract_len = 1d

[forecast]
arima_refit_period_min = 120
arima_bin_min = 10
arima_grid_max = 1,1,1

[run]
seed = 7
quarter_len = 6h
"""


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    ini = base / "tiny.ini"
    ini.write_text(TINY)
    outs = []
    for k in range(2):
        out = base / f"out{k}"
        assert main(["simulate", "--config", str(ini), "--out", str(out), "--quiet"]) == EXIT_OK
        outs.append(out)
    return base, outs


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_writes_every_output(runs):
    _, (out, _) = runs
    m = RunManifest.load(out / "manifest.json")
    for name in ("risk_taking", "no_risk_adjustment", "auto_arima", "pure_reserved", "best_case"):
        assert (out / f"profit_{name}.csv").exists() and (out / f"ledger_{name}.csv").exists()
    for table in ("comparison", "normalized_profit", "correlations", "estimation_error"):
        assert m.outputs[table] == f"{table}.csv"
    assert m.seed == 7 and len(m.config_hash) == 64
    assert read_rows(out / "profit_risk_taking.csv")[0] == ["t1", "t2", "rho", "omega", "psi",
                                                             "utilization"]
    assert len(read_rows(out / "profit_risk_taking.csv")) == 1 + 8


def test_analysis_table_headers(runs):
    _, (out, _) = runs
    assert read_rows(out / "comparison.csv")[0] == ["strategy", "label", "highest", "lowest",
                                                    "mean", "quarters"]
    assert read_rows(out / "normalized_profit.csv")[0] == ["quarter", "strategy", "psi",
                                                           "normalized"]
    assert read_rows(out / "correlations.csv")[0] == ["x", "y", "method", "coefficient",
                                                      "p_value", "n", "note"]
    err = read_rows(out / "estimation_error.csv")
    assert err[0] == ["period_start", "forecast", "actual", "error_pct", "excluded"]
    assert len(err) > 1


def test_repeat_runs_are_byte_identical(runs):
    _, (a, b) = runs
    names = sorted(f for f in os.listdir(a) if f.endswith(".csv"))
    assert names == sorted(f for f in os.listdir(b) if f.endswith(".csv"))
    for f in names:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    ma, mb = RunManifest.load(a / "manifest.json"), RunManifest.load(b / "manifest.json")
    assert ma.digests == mb.digests


def test_strategy_and_seed_flags(runs, tmp_path):
    base, _ = runs
    out = tmp_path / "o"
    rc = main(["simulate", "--config", str(base / "tiny.ini"), "--out", str(out), "--quiet",
               "--seed", "3", "--strategies", "pure_reserved,best_case"])
    assert rc == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    assert m["seed"] == 3 and sorted(k for k in m["outputs"] if k.startswith("profit_")) == [
        "profit_best_case", "profit_pure_reserved"]


def test_config_error_exit_code(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[pricing]\nreserved_discount = 2\n")
    assert main(["simulate", "--config", str(ini), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "bad.ini:2" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_env_error_exit_code(tmp_path, monkeypatch, runs):
    base, _ = runs
    monkeypatch.setenv("RISKBROKER_RUN_SEED", "abc")
    assert main(["simulate", "--config", str(base / "tiny.ini"), "--out",
                 str(tmp_path / "o")]) == EXIT_CONFIG


def test_gen_trace(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["gen-trace", "--profile", "dataset2", "--horizon", "1h", "--seed", "3",
                 "--out", str(out)]) == EXIT_OK
    rows = read_rows(out)
    assert rows[0] == ["request_id", "start_time", "end_time"] and len(rows) > 1
    assert main(["gen-trace", "--profile", "dataset1", "--horizon", "soon", "--out",
                 str(out)]) == EXIT_CONFIG


def test_simulate_from_trace_file(tmp_path):
    trace = tmp_path / "t.csv"
    main(["gen-trace", "--profile", "dataset1", "--horizon", "3h", "--out", str(trace)])
    ini = tmp_path / "s.ini"
    ini.write_text("[trace]\npath = t.csv\n[pricing]\ncontract_len = 1h\n"
                   "[broker]\nstrategies = risk_taking,pure_ondemand\n[run]\nquarter_len = 1h\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(ini), "--out", str(out), "--quiet"]) == EXIT_OK
    m = RunManifest.load(out / "manifest.json")
    assert "source_sha256" in m.trace
    rows = read_rows(out / "profit_pure_ondemand.csv")[1:]
    # pass-through: revenue and cost agree over the run, not per window
    assert sum(float(r[2]) for r in rows) == sum(float(r[3]) for r in rows)


def test_analyze_pools_runs(runs, tmp_path):
    _, (a, b) = runs
    out = tmp_path / "an"
    assert main(["analyze", "--runs", str(a / "manifest.json"), str(b / "manifest.json"),
                 "--out", str(out)]) == EXIT_OK
    rows = read_rows(out / "comparison.csv")
    assert all(r[5] == "16" for r in rows[1:])
    assert main(["analyze", "--runs", str(tmp_path / "none.json"), "--out", str(out)]) == EXIT_CONFIG


def test_parallel_and_serial_runs_agree(tmp_path):
    ini = tmp_path / "s.ini"
    ini.write_text(TINY.replace("[run]", "[run]\nworkers = 1"))
    par = tmp_path / "p.ini"
    par.write_text(TINY.replace("[run]", "[run]\nworkers = 3"))
    a, b = tmp_path / "serial", tmp_path / "parallel"
    assert main(["simulate", "--config", str(ini), "--out", str(a), "--quiet"]) == EXIT_OK
    assert main(["simulate", "--config", str(par), "--out", str(b), "--quiet"]) == EXIT_OK
    for f in sorted(os.listdir(a)):
        if f.endswith(".csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes(), f
