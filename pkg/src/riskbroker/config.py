"""Scenario configuration: INI-style sections, validation, and environment overrides.

Every key has a default, so a file naming only a trace is a complete
scenario. Any key can be overridden from the environment as
``RISKBROKER_<SECTION>_<KEY>`` (upper case), which wins over the file.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

from .broker import ARRIVALS_FIRST, STRATEGIES, TERMINATIONS_FIRST, ArimaSettings
from .domain import PricingConfig
from .risk import RiskConfig
from .trace import PROFILES, DurationModel, TraceStats, parse_duration

ENV_PREFIX = "RISKBROKER_"
DEFAULT_STRATEGIES = ("risk_taking", "no_risk_adjustment", "auto_arima", "pure_reserved",
                      "best_case")

# section -> key -> default (as text, the way it would be written in a file)
DEFAULTS: dict[str, dict[str, str]] = {
    "trace": {
        "source": "",
        "path": "",
        "format": "csv",
        "profile": "dataset1",
        "mean": "",
        "sd": "",
        "horizon": "1d",
        "duration_median_min": "30",
        "duration_sigma": "1.0",
        "block_len_min": "60",
    },
    "pricing": {
        "ondemand_rate": "1.0",
        "reserved_discount": "0.60",
        "contract_len": "3mo",
        "cashback_fraction": "1.0",
    },
    "risk": {
        "weights": "1/3,1/3,1/3",
        "anomaly_window_frac": "0.10",
        "sd_multiplier": "2.0",
        "adjustment_step": "0.05",
        "decision_threshold": "0.5",
        "decision_threshold_mode": "geq",
        "clamp": "true",
    },
    "forecast": {
        "arima_grid_max": "3,2,3",
        "arima_refit_period_min": "1440",
        "arima_target": "active",
        "arima_bin_min": "60",
    },
    "broker": {
        "strategies": ",".join(DEFAULT_STRATEGIES),
        "optimiser_period_min": "1",
        "event_order": "arrivals,terminations",
        "engine": "fast",
    },
    "run": {
        "seed": "0",
        "quarter_len": "3mo",
        "write_ledger": "true",
        "itemize_ledger": "false",
        "workers": "1",
    },
}


class ConfigError(ValueError):
    """Invalid scenario configuration; `problems` lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class TraceSource:
    source: str
    path: str | None
    format: str
    stats: TraceStats | None
    horizon: int | None
    durations: DurationModel
    block_len: int


@dataclass
class ScenarioConfig:
    trace: TraceSource
    pricing: PricingConfig
    risk: RiskConfig
    arima: ArimaSettings
    strategies: tuple[str, ...]
    optimiser_period: int
    event_order: tuple[str, str]
    engine: str
    seed: int
    quarter_len: int
    write_ledger: bool
    itemize_ledger: bool
    workers: int
    resolved: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def digest(self) -> str:
        """Hash of the fully resolved configuration (seed excluded)."""
        body = {k: v for k, v in self.resolved.items() if k != "run"}
        body["run"] = {k: v for k, v in self.resolved.get("run", {}).items() if k != "seed"}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    where = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip().lower()
        elif section and ("=" in s or ":" in s):
            key = s.replace(":", "=", 1).split("=", 1)[0].strip().lower()
            where[(section, key)] = n
    return where


def read_config_text(text: str, source: str = "<config>", env=None):
    """Parse INI text into ``{section: {key: value}}`` plus line references."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    raw = {sec.lower(): {k.lower(): v for k, v in parser.items(sec)} for sec in parser.sections()}
    lines = {k: f"{source}:{n}" for k, n in _line_numbers(text).items()}
    env = os.environ if env is None else env
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        sec, key = next(((s, rest[len(s) + 1:]) for s in DEFAULTS if rest.startswith(s + "_")),
                        tuple(rest.split("_", 1)) if "_" in rest else (rest, ""))
        raw.setdefault(sec, {})[key] = value
        lines[(sec, key)] = f"${name}"
    return raw, lines


def load_config(path, env=None, overrides: dict | None = None) -> "ScenarioConfig":
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from None
    raw, lines = read_config_text(text, str(path), env)
    for (sec, key), value in (overrides or {}).items():
        raw.setdefault(sec, {})[key] = str(value)
        lines[(sec, key)] = "command line"
    base = os.path.dirname(os.path.abspath(str(path)))
    return validate_config(raw, lines, base_dir=base)


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _number(v: str) -> float:
    s = v.strip()
    if "/" in s:
        a, b = s.split("/", 1)
        return float(a) / float(b)
    return float(s)


def _ints(v: str, n: int) -> tuple[int, ...]:
    parts = [p.strip() for p in v.split(",") if p.strip()]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated integers, got {v!r}")
    return tuple(int(p) for p in parts)


def validate_config(raw: dict, lines: dict | None = None, base_dir: str = ".") -> ScenarioConfig:
    """Check every key, fill defaults, and return the resolved scenario.

    All problems are collected before raising, each tagged with the file
    line (or environment variable) it came from.
    """
    lines = lines or {}
    problems: list[str] = []
    warnings: list[str] = []

    def where(sec, key):
        loc = lines.get((sec, key))
        return f"{loc}: " if loc else ""

    for sec, keys in raw.items():
        if sec not in DEFAULTS:
            first = next(iter(keys), "")
            problems.append(f"{where(sec, first)}unknown section [{sec}]")
            continue
        for key in keys:
            if key not in DEFAULTS[sec]:
                problems.append(f"{where(sec, key)}unknown key {sec}.{key}")

    val = {sec: {**d, **{k: v for k, v in raw.get(sec, {}).items() if k in d}}
           for sec, d in DEFAULTS.items()}

    def get(sec, key, conv, check=None, msg=""):
        text = val[sec][key]
        try:
            out = conv(text)
        except (ValueError, TypeError) as exc:
            problems.append(f"{where(sec, key)}{sec}.{key}: {exc}")
            return None
        if check is not None and not check(out):
            problems.append(f"{where(sec, key)}{sec}.{key} = {text!r}: {msg}")
            return None
        return out

    # trace
    t = val["trace"]
    source = t["source"].strip().lower() or ("file" if t["path"].strip() else "synthesize")
    val["trace"]["source"] = source
    if source not in ("file", "synthesize", "resample"):
        problems.append(f"{where('trace', 'source')}trace.source must be file, synthesize or resample")
    path = t["path"].strip() or None
    if path and not os.path.isabs(path):
        path = os.path.normpath(os.path.join(base_dir, path))
    if source in ("file", "resample"):
        if not path:
            problems.append(f"trace.path is required when trace.source = {source}")
        elif not os.path.exists(path):
            problems.append(f"{where('trace', 'path')}trace file not found: {path}")
    if t["format"].strip().lower() != "csv":
        problems.append(f"{where('trace', 'format')}trace.format: only csv is supported")
    horizon = None
    horizon_given = "horizon" in raw.get("trace", {})
    if source != "file" or horizon_given:
        horizon = get("trace", "horizon", parse_duration, lambda h: h > 0, "must be positive")
    stats = None
    if source == "synthesize":
        profile = t["profile"].strip().lower()
        if profile == "custom":
            mean = get("trace", "mean", float, lambda x: x >= 0, "must be non-negative")
            sd = get("trace", "sd", float, lambda x: x >= 0, "must be non-negative")
            if mean is not None and sd is not None:
                # the count model only reads mean and sd; the rest just has to be consistent
                lo, hi = (0.0, mean + 10 * sd) if sd > 0 else (mean, mean)
                stats = TraceStats(0, mean, sd, lo, hi, lo, mean, mean if sd == 0 else mean + sd)
        elif profile in PROFILES:
            stats = PROFILES[profile]
            if t["mean"] or t["sd"]:
                warnings.append("trace.mean/sd are ignored unless trace.profile = custom")
        else:
            problems.append(f"{where('trace', 'profile')}trace.profile must be "
                            f"{', '.join(PROFILES)} or custom")
    median = get("trace", "duration_median_min", float, lambda x: x > 0, "must be positive")
    sigma = get("trace", "duration_sigma", float, lambda x: x >= 0, "must be non-negative")
    block = get("trace", "block_len_min", parse_duration, lambda x: x > 0, "must be positive")
    durations = DurationModel(math.log(median) if median else 0.0, sigma if sigma is not None else 1.0)

    # pricing
    p = {
        "ondemand_rate": get("pricing", "ondemand_rate", float, lambda x: x > 0, "must be positive"),
        "reserved_discount": get("pricing", "reserved_discount", float, lambda x: 0 <= x < 1,
                                 "must be in [0, 1)"),
        "contract_len": get("pricing", "contract_len", parse_duration, lambda x: x > 0,
                            "must be positive"),
        "cashback_fraction": get("pricing", "cashback_fraction", float, lambda x: 0 <= x <= 1,
                                 "must be in [0, 1]"),
    }
    pricing = PricingConfig(**p) if None not in p.values() else None

    # risk
    weights = get("risk", "weights", lambda v: tuple(_number(x) for x in v.split(",")),
                  lambda w: len(w) == 3 and all(x >= 0 for x in w),
                  "needs three non-negative weights")
    r = {
        "anomaly_window_frac": get("risk", "anomaly_window_frac", float, lambda x: 0 < x <= 1,
                                   "must be in (0, 1]"),
        "sd_multiplier": get("risk", "sd_multiplier", float, lambda x: x > 0, "must be positive"),
        "adjustment_step": get("risk", "adjustment_step", float, lambda x: 0 <= x <= 1,
                               "must be in [0, 1]"),
        "decision_threshold": get("risk", "decision_threshold", float, lambda x: 0 <= x <= 1,
                                  "must be in [0, 1]"),
        "decision_threshold_mode": get("risk", "decision_threshold_mode",
                                       lambda v: v.strip().lower(), lambda x: x in ("geq", "leq"),
                                       "must be geq or leq"),
        "clamp": get("risk", "clamp", _bool),
    }
    risk = None
    if weights is not None and None not in r.values():
        risk = RiskConfig(weights=weights, **r)
        if not r["clamp"] and sum(weights) > 1 + 1e-12:
            warnings.append(f"risk.weights sum to {sum(weights):.6g} > 1 with clamp disabled; "
                            "aggregated risk can leave [0, 1] and stop the run")

    # forecast
    grid = get("forecast", "arima_grid_max", lambda v: _ints(v, 3), lambda g: min(g) >= 0,
               "must be non-negative")
    refit = get("forecast", "arima_refit_period_min", parse_duration, lambda x: x > 0,
                "must be positive")
    target = get("forecast", "arima_target", lambda v: v.strip().lower(),
                 lambda x: x in ("active", "arrivals"), "must be active or arrivals")
    bin_len = get("forecast", "arima_bin_min", parse_duration, lambda x: x > 0, "must be positive")
    arima = None
    if None not in (grid, refit, target, bin_len):
        arima = ArimaSettings(grid, refit, target, bin_len)
        problems.extend(f"forecast: {m}" for m in arima.problems())

    # broker
    names = [s.strip() for s in val["broker"]["strategies"].split(",") if s.strip()]
    if not names:
        problems.append("broker.strategies selects no strategy")
    for s in names:
        if s not in STRATEGIES:
            problems.append(f"{where('broker', 'strategies')}unknown strategy {s!r} "
                            f"(choose from {', '.join(STRATEGIES)})")
    if len(set(names)) != len(names):
        problems.append(f"{where('broker', 'strategies')}broker.strategies lists a strategy twice")
    period = get("broker", "optimiser_period_min", parse_duration, lambda x: x > 0,
                 "must be positive")
    order_text = val["broker"]["event_order"].replace(" ", "").lower()
    orders = {"arrivals,terminations": ARRIVALS_FIRST, "terminations,arrivals": TERMINATIONS_FIRST}
    order = orders.get(order_text)
    if order is None:
        problems.append(f"{where('broker', 'event_order')}broker.event_order must be "
                        "'arrivals,terminations' or 'terminations,arrivals'")
    engine = val["broker"]["engine"].strip().lower()
    if engine not in ("fast", "reference"):
        problems.append(f"{where('broker', 'engine')}broker.engine must be fast or reference")

    # run
    seed = get("run", "seed", int, lambda x: x >= 0, "must be a non-negative integer")
    quarter = get("run", "quarter_len", parse_duration, lambda x: x > 0, "must be positive")
    write_ledger = get("run", "write_ledger", _bool)
    itemize = get("run", "itemize_ledger", _bool)
    workers = get("run", "workers", int, lambda x: x >= 1, "must be at least 1")
    if itemize and engine == "fast":
        problems.append("run.itemize_ledger needs broker.engine = reference")

    if problems:
        raise ConfigError(problems)
    if "auto_arima" in names:
        bins = risk.window_len(pricing.contract_len) // arima.bin_len
        if bins < arima.min_bins:
            warnings.append(f"auto_arima: the fit window holds {bins} bins of {arima.bin_len} min "
                            f"but grid {arima.grid_max} needs {arima.min_bins}; it will never "
                            "leave warm-up (lower forecast.arima_bin_min or the grid)")

    resolved = {sec: dict(sorted(keys.items())) for sec, keys in val.items()}
    if path:
        resolved["trace"]["path"] = path
    return ScenarioConfig(
        trace=TraceSource(source, path, "csv", stats, horizon, durations, block),
        pricing=pricing, risk=risk, arima=arima, strategies=tuple(names),
        optimiser_period=period, event_order=order, engine=engine, seed=seed,
        quarter_len=quarter, write_ledger=write_ledger, itemize_ledger=itemize,
        workers=workers, resolved=resolved, warnings=warnings,
    )


def default_config_text() -> str:
    """Every key at its default, in file form."""
    out = []
    for sec, keys in DEFAULTS.items():
        out.append(f"[{sec}]")
        out.extend(f"{k} = {v}" for k, v in keys.items())
        out.append("")
    return "\n".join(out)


__all__ = [
    "ConfigError", "DEFAULTS", "ENV_PREFIX", "ScenarioConfig", "TraceSource",
    "default_config_text", "load_config", "read_config_text", "validate_config",
]
