from __future__ import annotations

import pytest

from riskbroker.broker import TERMINATIONS_FIRST
from riskbroker.config import (
    ConfigError,
    default_config_text,
    load_config,
    read_config_text,
    validate_config,
)
from riskbroker.domain import QUARTER
from riskbroker.trace import DATASET2


def cfg_from(text, env=None, base="."):
    raw, lines = read_config_text(text, "s.ini", env or {})
    return validate_config(raw, lines, base)


def test_defaults_complete():
    cfg = cfg_from("")
    assert cfg.trace.source == "synthesize" and cfg.trace.horizon == 1440
    assert cfg.pricing.contract_len == QUARTER and cfg.pricing.reserved_discount == 0.6
    assert cfg.risk.weights == pytest.approx((1 / 3, 1 / 3, 1 / 3))
    assert cfg.strategies == ("risk_taking", "no_risk_adjustment", "auto_arima",
                              "pure_reserved", "best_case")
    assert cfg.engine == "fast" and cfg.seed == 0 and cfg.quarter_len == QUARTER


def test_default_text_round_trips():
    assert cfg_from(default_config_text()).digest() == cfg_from("").digest()


def test_values_parsed():
    cfg = cfg_from("""
[trace]
profile = dataset2
horizon = 8d
[broker]
event_order = terminations, arrivals
strategies = best_case,pure_reserved
[risk]
weights = 0.5, 0.25, 0.25
""")
    assert cfg.trace.stats == DATASET2 and cfg.trace.horizon == 8 * 1440
    assert cfg.event_order == TERMINATIONS_FIRST
    assert cfg.strategies == ("best_case", "pure_reserved")
    assert cfg.risk.weights == (0.5, 0.25, 0.25)


def test_custom_profile():
    cfg = cfg_from("[trace]\nprofile = custom\nmean = 4\nsd = 2\n")
    assert (cfg.trace.stats.mean, cfg.trace.stats.sd) == (4.0, 2.0)


def test_path_implies_file_source(tmp_path):
    (tmp_path / "t.csv").write_text("a,0,5\n")
    ini = tmp_path / "s.ini"
    ini.write_text("[trace]\npath = t.csv\n")
    cfg = load_config(ini, env={})
    assert cfg.trace.source == "file" and cfg.trace.path == str(tmp_path / "t.csv")
    assert cfg.trace.horizon is None


def test_all_problems_reported_with_lines():
    with pytest.raises(ConfigError) as exc:
        cfg_from("[pricing]\nreserved_discount = 1.5\n[risk]\nweights = 1,2\n"
                 "[broker]\nstrategies = magic\n[bogus]\nx = 1\n")
    probs = exc.value.problems
    assert any(p.startswith("s.ini:2:") and "reserved_discount" in p for p in probs)
    assert any(p.startswith("s.ini:4:") and "weights" in p for p in probs)
    assert any("unknown strategy 'magic'" in p for p in probs)
    assert any("unknown section [bogus]" in p for p in probs)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key pricing.rate"):
        cfg_from("[pricing]\nrate = 2\n")


def test_missing_trace_file():
    with pytest.raises(ConfigError, match="not found"):
        cfg_from("[trace]\nsource = file\npath = /nonexistent/x.csv\n")
    with pytest.raises(ConfigError, match="required"):
        cfg_from("[trace]\nsource = resample\n")


def test_env_overrides_file():
    cfg = cfg_from("[run]\nseed = 3\n", env={"RISKBROKER_RUN_SEED": "11",
                                             "RISKBROKER_PRICING_CONTRACT_LEN": "1d"})
    assert cfg.seed == 11 and cfg.pricing.contract_len == 1440


def test_env_errors_name_the_variable():
    with pytest.raises(ConfigError) as exc:
        cfg_from("", env={"RISKBROKER_RUN_SEED": "-1", "RISKBROKER_RUN_COLOUR": "x"})
    text = str(exc.value)
    assert "$RISKBROKER_RUN_SEED:" in text and "$RISKBROKER_RUN_COLOUR:" in text


def test_overrides_win(tmp_path):
    ini = tmp_path / "s.ini"
    ini.write_text("[run]\nseed = 1\n")
    assert load_config(ini, env={}, overrides={("run", "seed"): 9}).seed == 9


def test_warning_for_unclamped_heavy_weights():
    cfg = cfg_from("[risk]\nweights = 1,1,1\nclamp = false\n")
    assert any("clamp" in w for w in cfg.warnings)


def test_itemize_needs_reference_engine():
    with pytest.raises(ConfigError, match="itemize"):
        cfg_from("[run]\nitemize_ledger = true\n")
    assert cfg_from("[run]\nitemize_ledger = true\n[broker]\nengine = reference\n").itemize_ledger


def test_digest_ignores_seed_only():
    a, b = cfg_from("[run]\nseed = 1\n"), cfg_from("[run]\nseed = 2\n")
    c = cfg_from("[pricing]\nreserved_discount = 0.5\n")
    assert a.digest() == b.digest() != c.digest()


def test_unreadable_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/s.ini", env={})


def test_warning_when_arima_window_is_too_short():
    # 10% of one day is 144 minutes: 14 bins of 10, the default grid needs 18
    short = "[pricing]\ncontract_len = 1d\n[forecast]\narima_bin_min = 10\n"
    assert any("warm-up" in w for w in cfg_from(short).warnings)
    assert not any("warm-up" in w for w in cfg_from(short + "arima_grid_max = 1,1,1\n").warnings)
    no_arima = short + "[broker]\nstrategies = risk_taking\n"
    assert not any("warm-up" in w for w in cfg_from(no_arima).warnings)
    assert not cfg_from("").warnings
