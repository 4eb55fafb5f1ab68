"""Command-line entry point and scenario orchestration.

    riskbroker simulate --config scenario.ini [--seed N] [--out DIR] [--strategies a,b,c]
    riskbroker gen-trace --profile dataset1|dataset2 --horizon 3y --seed N --out trace.csv
    riskbroker analyze --runs out/a/manifest.json out/b/manifest.json --out DIR

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, analysis
from .accounting import quarter_windows, read_profit_csv, write_ledger_csv, write_profit_csv
from .broker import make_strategy, simulate
from .config import ConfigError, ScenarioConfig, load_config
from .trace import (
    PROFILES,
    DurationModel,
    TraceError,
    file_digest,
    load_trace,
    parse_duration,
    resample_trace,
    synthesize_trace,
    write_trace,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    outputs: dict[str, str]
    digests: dict[str, str]
    wall_clock_s: float
    version: str
    config: dict
    trace: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def build_trace(cfg: ScenarioConfig):
    src = cfg.trace
    if src.source == "file":
        return load_trace(src.path, src.format, horizon=src.horizon)
    if src.source == "resample":
        base = load_trace(src.path, src.format)
        return resample_trace(base, src.horizon, seed=cfg.seed, block_len=src.block_len)
    return synthesize_trace(src.stats, src.durations, horizon=src.horizon, seed=cfg.seed)


def _run_one(args):
    trace, name, cfg = args
    strategy = make_strategy(name, arima=cfg.arima)
    return simulate(trace, strategy, cfg.pricing, cfg.risk, seed=cfg.seed, engine=cfg.engine,
                    optimiser_period=cfg.optimiser_period, event_order=cfg.event_order,
                    itemize=cfg.itemize_ledger)


def _write_drivers(path, windows, drivers):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(drivers)
        w.writerow(["quarter", "t1", "t2", *keys])
        for q, (lo, hi) in enumerate(windows):
            w.writerow([q, lo, hi, *(analysis._f(drivers[k][q]) for k in keys)])


def _read_drivers(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    keys = [k for k in (rows[0].keys() if rows else []) if k not in ("quarter", "t1", "t2")]
    return {k: np.asarray([float(r[k]) if r[k] != "" else math.nan for r in rows]) for k in keys}


def _write_forecasts(path, periods):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period_start", "forecast", "actual"])
        for start, f, a in periods:
            w.writerow([start, repr(f), repr(a)])


def _read_forecasts(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return [(int(r["period_start"]), float(r["forecast"]), float(r["actual"]))
                for r in csv.DictReader(fh)]


def write_analysis(out_dir, psi, drivers, periods) -> dict[str, str]:
    """The four analysis tables; returns name -> file path."""
    table = analysis.compare_strategies(psi)
    files = {
        "comparison": os.path.join(out_dir, "comparison.csv"),
        "normalized_profit": os.path.join(out_dir, "normalized_profit.csv"),
        "correlations": os.path.join(out_dir, "correlations.csv"),
        "estimation_error": os.path.join(out_dir, "estimation_error.csv"),
    }
    analysis.write_comparison_csv(table, files["comparison"])
    analysis.write_normalized_csv(psi, files["normalized_profit"], table.difference)
    diff = table.difference if table.difference is not None else np.zeros(0)
    rows = analysis.correlation_table(diff, drivers) if len(diff) else []
    analysis.write_correlations_csv(rows, files["correlations"])
    analysis.write_estimation_error_csv(periods, files["estimation_error"])
    return files


def run_scenario(cfg: ScenarioConfig, out_dir: str, log=None) -> RunManifest:
    """Simulate every selected strategy on one trace and write all outputs.

    Outputs go to a scratch directory first and are moved into `out_dir`
    only when everything succeeded, so a failed run leaves nothing behind.
    """
    log = log or (lambda msg: None)
    t0 = time.perf_counter()
    parent = os.path.dirname(os.path.abspath(out_dir)) or "."
    os.makedirs(parent, exist_ok=True)
    scratch = tempfile.mkdtemp(prefix=".partial-", dir=parent)
    try:
        trace = build_trace(cfg)
        log(f"trace: {len(trace)} requests over {trace.horizon} minutes")
        jobs = [(trace, name, cfg) for name in cfg.strategies]
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_run_one, jobs))
        else:
            results = [_run_one(j) for j in jobs]
        outputs = {}
        psi = {}
        windows = quarter_windows(trace.horizon, cfg.quarter_len, trace.horizon + 1)
        for res in results:
            name = res.strategy
            log(f"{name}: {res.counters}")
            reports = res.quarterly(cfg.quarter_len)
            psi[name] = [r.margin_psi for r in reports]
            prof = os.path.join(scratch, f"profit_{name}.csv")
            write_profit_csv(reports, prof)
            outputs[f"profit_{name}"] = prof
            if cfg.write_ledger:
                led = os.path.join(scratch, f"ledger_{name}.csv")
                write_ledger_csv(res.ledger, led)
                outputs[f"ledger_{name}"] = led
        by_name = {r.strategy: r for r in results}
        driver_src = by_name.get("risk_taking") or results[0]
        drivers = analysis.quarterly_drivers(driver_src, windows)
        drv = os.path.join(scratch, "drivers.csv")
        _write_drivers(drv, windows, drivers)
        outputs["drivers"] = drv
        periods = []
        if "auto_arima" in by_name:
            periods = analysis.arima_error_periods(by_name["auto_arima"], cfg.arima.bin_len)
            fc = os.path.join(scratch, "forecasts_auto_arima.csv")
            _write_forecasts(fc, periods)
            outputs["forecasts_auto_arima"] = fc
        outputs.update(write_analysis(scratch, psi, drivers, periods))

        if os.path.exists(out_dir):
            shutil.rmtree(out_dir)
        os.replace(scratch, out_dir)
        scratch = None
        final = {k: os.path.join(out_dir, os.path.basename(v)) for k, v in outputs.items()}
        digests = {k: file_digest(v) for k, v in final.items()}
        trace_info = {"requests": len(trace), "horizon": trace.horizon}
        if cfg.trace.path:
            trace_info["source_sha256"] = file_digest(cfg.trace.path)
        manifest = RunManifest(
            config_hash=cfg.digest(), seed=cfg.seed,
            outputs={k: os.path.basename(v) for k, v in final.items()}, digests=digests,
            wall_clock_s=round(time.perf_counter() - t0, 3), version=__version__,
            config=cfg.resolved, trace=trace_info, warnings=list(cfg.warnings),
        )
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            fh.write(manifest.to_json() + "\n")
        return manifest
    finally:
        if scratch is not None:
            shutil.rmtree(scratch, ignore_errors=True)


def analyze_runs(manifest_paths, out_dir) -> dict[str, str]:
    """Pool the quarterly results of several runs into one set of analysis tables.

    Quarters are concatenated run by run, in the order given, so a table
    over several seeds treats every (seed, quarter) as one observation.
    """
    psi: dict[str, list] = {}
    drivers: dict[str, list] = {}
    periods = []
    lengths = set()
    for path in manifest_paths:
        m = RunManifest.load(path)
        base = os.path.dirname(os.path.abspath(path))
        names = sorted(k[len("profit_"):] for k in m.outputs if k.startswith("profit_"))
        if psi and set(names) != set(psi):
            raise ValueError(f"{path}: runs select different strategies")
        for name in names:
            reports = read_profit_csv(os.path.join(base, m.outputs[f"profit_{name}"]))
            psi.setdefault(name, []).extend(r.margin_psi for r in reports)
            lengths.add(len(reports))
        if "drivers" in m.outputs:
            for k, v in _read_drivers(os.path.join(base, m.outputs["drivers"])).items():
                drivers.setdefault(k, []).extend(v.tolist())
        if "forecasts_auto_arima" in m.outputs:
            periods.extend(_read_forecasts(os.path.join(base, m.outputs["forecasts_auto_arima"])))
    os.makedirs(out_dir, exist_ok=True)
    drv = {k: np.asarray(v) for k, v in drivers.items()}
    return write_analysis(out_dir, psi, drv, periods)


# --------------------------------------------------------------------------
# argument handling

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskbroker", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="runs/latest")
    s.add_argument("--strategies")
    s.add_argument("--quiet", action="store_true")

    g = sub.add_parser("gen-trace", help="write a synthetic trace")
    g.add_argument("--profile", required=True, choices=sorted(PROFILES))
    g.add_argument("--horizon", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--duration-median", type=float, default=30.0)
    g.add_argument("--duration-sigma", type=float, default=1.0)

    a = sub.add_parser("analyze", help="pool the tables of finished runs")
    a.add_argument("--runs", nargs="+", required=True)
    a.add_argument("--out", required=True)
    return p


def _cmd_simulate(ns) -> int:
    overrides = {}
    if ns.seed is not None:
        overrides[("run", "seed")] = ns.seed
    if ns.strategies:
        overrides[("broker", "strategies")] = ns.strategies
    cfg = load_config(ns.config, overrides=overrides)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    log = (lambda m: None) if ns.quiet else (lambda m: print(m, file=sys.stderr))
    manifest = run_scenario(cfg, ns.out, log)
    print(os.path.join(ns.out, "manifest.json"))
    log(f"done in {manifest.wall_clock_s:.1f} s")
    return EXIT_OK


def _cmd_gen_trace(ns) -> int:
    try:
        horizon = parse_duration(ns.horizon)
    except ValueError as exc:
        raise ConfigError([f"--horizon: {exc}"]) from None
    if horizon <= 0:
        raise ConfigError(["--horizon must be positive"])
    if not ns.duration_median > 0 or ns.duration_sigma < 0:
        raise ConfigError(["--duration-median must be positive and --duration-sigma non-negative"])
    model = DurationModel(math.log(ns.duration_median), ns.duration_sigma)
    trace = synthesize_trace(PROFILES[ns.profile], model, horizon=horizon, seed=ns.seed)
    write_trace(trace, ns.out)
    print(f"{ns.out}: {len(trace)} requests over {horizon} minutes")
    return EXIT_OK


def _cmd_analyze(ns) -> int:
    for path in ns.runs:
        if not os.path.exists(path):
            raise ConfigError([f"manifest not found: {path}"])
    files = analyze_runs(ns.runs, ns.out)
    for path in files.values():
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    ns = _parser().parse_args(argv)
    handlers = {"simulate": _cmd_simulate, "gen-trace": _cmd_gen_trace, "analyze": _cmd_analyze}
    try:
        return handlers[ns.command](ns)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
