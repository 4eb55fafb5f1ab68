from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from riskbroker.domain import DAY, HOUR, UserRequest
from riskbroker.trace import (
    DATASET1,
    DATASET2,
    DurationModel,
    Trace,
    TraceError,
    TraceStats,
    from_requests,
    load_trace,
    parse_duration,
    resample_trace,
    synthesize_trace,
    trace_stats,
    write_trace,
)

from conftest import make_trace


def ks_distance(a, b) -> float:
    a, b = np.sort(a), np.sort(b)
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def test_dataset1_profile_mean():
    t = synthesize_trace(DATASET1, horizon=30 * DAY, seed=0)
    assert 73.2 <= trace_stats(t).mean <= 80.9


def test_dataset2_profile_sd():
    t = synthesize_trace(DATASET2, horizon=30 * DAY, seed=0)
    assert 333 <= trace_stats(t).sd <= 407


def test_constant_profile_gives_one_request_per_minute():
    stats = TraceStats(100, 1.0, 0.0, 1, 1, 1, 1, 1)
    t = synthesize_trace(stats, DurationModel(np.log(5.0), 0.0), horizon=100, seed=3)
    assert np.array_equal(t.arrival_counts(), np.ones(100, dtype=np.int64))
    assert np.all(t.durations[:-5] == 5)


def test_infeasible_stats_rejected():
    with pytest.raises(TraceError):
        synthesize_trace(TraceStats(10, 5.0, 0.0, 0, 10, 5, 5, 5), horizon=10)
    with pytest.raises(TraceError):
        synthesize_trace(TraceStats(10, 5.0, 1.0, 6, 10, 6, 6, 6), horizon=10)


def test_synthesis_is_seeded():
    a = synthesize_trace(DATASET1, horizon=DAY, seed=4)
    b = synthesize_trace(DATASET1, horizon=DAY, seed=4)
    c = synthesize_trace(DATASET1, horizon=DAY, seed=5)
    assert a.equals(b) and not a.equals(c)


def test_trace_stats_examples():
    assert trace_stats(make_trace([(0, 1)], horizon=2)).mean == 0.5
    t = make_trace([(m, m + 1) for m in range(4) for _ in range(3)])
    s = trace_stats(t)
    assert s.mean == 3.0 and s.sd == 0.0


@settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.floats(2.0, 120.0), st.floats(0.3, 3.0), st.integers(0, 10_000))
def test_round_trip_stats(mean, dispersion, seed):
    sd = dispersion * float(np.sqrt(mean)) * 3
    stats = TraceStats(1000, mean, sd, 0, 10 * mean + 20 * sd, mean, mean, mean)
    got = trace_stats(synthesize_trace(stats, horizon=20 * DAY, seed=seed))
    assert abs(got.mean - mean) <= 0.05 * mean
    assert abs(got.sd - sd) <= 0.10 * sd


@pytest.mark.parametrize("src_len,profile", [(12 * HOUR, DATASET1), (8 * DAY, DATASET2)])
def test_resample_preserves_rate_and_durations(src_len, profile):
    src = synthesize_trace(profile, horizon=src_len, seed=11)
    out = resample_trace(src, 60 * DAY, seed=2)
    s0, s1 = trace_stats(src), trace_stats(out)
    assert out.horizon == 60 * DAY
    assert abs(s1.mean - s0.mean) <= 0.10 * s0.mean
    assert abs(s1.sd - s0.sd) <= 0.10 * s0.sd
    # compare raw durations; the horizon cut only trims the last few
    inner = out.start < out.horizon - 10 * DAY
    assert ks_distance(src.durations, out.durations[inner]) <= 0.05


def test_resample_deterministic_and_errors():
    src = synthesize_trace(DATASET1, horizon=2 * HOUR, seed=1)
    assert resample_trace(src, DAY, seed=9).equals(resample_trace(src, DAY, seed=9))
    with pytest.raises(TraceError):
        resample_trace(Trace([], [], 10), 100)
    with pytest.raises(TraceError):
        resample_trace(src, src.horizon)


def test_csv_round_trip(tmp_path):
    t = from_requests([UserRequest("b", 3, 9), UserRequest("a", 0, 2), UserRequest("c", 3, 4)])
    p = tmp_path / "t.csv"
    write_trace(t, p)
    assert p.read_text().splitlines()[0] == "request_id,start_time,end_time"
    back = load_trace(p)
    assert back.equals(t)
    assert [r.request_id for r in back.requests] == ["a", "b", "c"]


def test_header_only_file_is_empty_trace(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("request_id,start_time,end_time\n")
    assert len(load_trace(p)) == 0


@pytest.mark.parametrize("body,needle", [
    ("a,5,5\n", "end_time"),
    ("a,1\n", "3 fields"),
    ("a,x,3\n", "integer"),
    ("a,-1,3\n", "negative"),
    ("a,1,3\na,2,4\n", "duplicate"),
])
def test_csv_errors(tmp_path, body, needle):
    p = tmp_path / "bad.csv"
    p.write_text("request_id,start_time,end_time\n" + body)
    with pytest.raises(TraceError, match=needle):
        load_trace(p)


def test_explicit_horizon_too_short(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,0,50\n")
    with pytest.raises(TraceError):
        load_trace(p, horizon=10)
    with pytest.raises(TraceError):
        load_trace(p, format="parquet")


def test_concurrency():
    t = make_trace([(0, 3), (1, 2), (2, 5)], horizon=5)
    assert t.concurrency().tolist() == [1, 2, 2, 1, 1, 0]


@pytest.mark.parametrize("text,minutes", [
    ("90m", 90), ("12h", 720), ("8d", 11520), ("3mo", 129600), ("3y", 1555200), ("17", 17), (5, 5),
])
def test_parse_duration(text, minutes):
    assert parse_duration(text) == minutes


def test_parse_duration_errors():
    for bad in ("abc", "1.5m", ""):
        with pytest.raises(ValueError):
            parse_duration(bad)
