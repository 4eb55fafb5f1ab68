"""Request traces: CSV ingest, synthetic generation, block-bootstrap resampling.

A trace is held columnar (int32 start/end arrays, sorted by start) because
the desk-scale scenarios reach 10^8 requests.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .domain import DAY, HOUR, UserRequest, YEAR
from .rng import substream

HEADER = ("request_id", "start_time", "end_time")


class TraceError(ValueError):
    """Malformed or invalid trace input."""


@dataclass(frozen=True)
class TraceStats:
    n_points: int
    mean: float
    sd: float
    min: float
    max: float
    q25: float
    q50: float
    q75: float

    def problems(self) -> list[str]:
        out = []
        if self.sd < 0:
            out.append("sd must be non-negative")
        if not self.min <= self.q25 <= self.q50 <= self.q75 <= self.max:
            out.append("require min <= q25 <= q50 <= q75 <= max")
        if not self.min <= self.mean <= self.max:
            out.append("mean must lie within [min, max]")
        if self.sd == 0 and self.min != self.max:
            out.append("sd = 0 is only consistent with min == max")
        if self.mean < 0:
            out.append("arrival rate cannot be negative")
        return out


# Per-minute arrival statistics of the two evaluation datasets.
DATASET1 = TraceStats(1_298_775, 77.08, 96.98, 0, 5_450, 18, 47, 108)
DATASET2 = TraceStats(7_324_831_146, 49.12, 370.43, 0, 129_215, 4, 14, 48)
PROFILES = {"dataset1": DATASET1, "dataset2": DATASET2}


@dataclass(frozen=True)
class DurationModel:
    """Log-normal request durations in minutes, rounded to >= 1."""

    mu: float = float(np.log(30.0))
    sigma: float = 1.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        d = np.rint(rng.lognormal(self.mu, self.sigma, n))
        return np.maximum(d, 1).astype(np.int64)


class Trace:
    """Requests sorted by start time over ``[0, horizon)``.

    ``end`` never exceeds ``horizon``; requests that would run past it are
    truncated there so that every run closes its books.
    """

    def __init__(self, start, end, horizon: int, ids=None, validate: bool = True):
        self.start = np.ascontiguousarray(start, dtype=np.int32)
        self.end = np.ascontiguousarray(end, dtype=np.int32)
        self.horizon = int(horizon)
        self.ids = None if ids is None else np.asarray(ids, dtype=object)
        if validate:
            self._validate()

    def _validate(self):
        s, e = self.start, self.end
        if s.shape != e.shape:
            raise TraceError("start and end must have equal length")
        if len(s):
            if np.any(np.diff(s) < 0):
                raise TraceError("requests must be sorted by start_time")
            if s[0] < 0 or s[-1] >= self.horizon:
                raise TraceError("start times must lie in [0, horizon)")
            if np.any(e <= s):
                raise TraceError("every request needs end_time > start_time")
            if e.max() > self.horizon:
                raise TraceError("end_time exceeds horizon")
        if self.ids is not None:
            if len(self.ids) != len(s):
                raise TraceError("ids length mismatch")
            if len(set(self.ids.tolist())) != len(self.ids):
                raise TraceError("duplicate request_id")

    def __len__(self):
        return len(self.start)

    def request_id(self, i: int) -> str:
        return str(self.ids[i]) if self.ids is not None else f"q{i}"

    @property
    def requests(self) -> Iterator[UserRequest]:
        for i in range(len(self)):
            yield UserRequest(self.request_id(i), int(self.start[i]), int(self.end[i]))

    @property
    def durations(self) -> np.ndarray:
        return self.end.astype(np.int64) - self.start

    def arrival_counts(self) -> np.ndarray:
        return np.bincount(self.start, minlength=self.horizon).astype(np.int64)

    def concurrency(self) -> np.ndarray:
        """Active requests in each minute, over ``[0, horizon]``."""
        n = self.horizon + 1
        diff = np.bincount(self.start, minlength=n) - np.bincount(self.end, minlength=n)
        return np.cumsum(diff[:n])

    def equals(self, other: "Trace") -> bool:
        return (
            self.horizon == other.horizon
            and np.array_equal(self.start, other.start)
            and np.array_equal(self.end, other.end)
            and (self.ids is None) == (other.ids is None)
            and (self.ids is None or np.array_equal(self.ids, other.ids))
        )


def from_requests(requests, horizon: int | None = None) -> Trace:
    reqs = sorted(requests, key=lambda r: r.start_time)
    if horizon is None:
        horizon = max((r.end_time for r in reqs), default=0)
    return Trace(
        [r.start_time for r in reqs], [r.end_time for r in reqs], horizon,
        ids=[r.request_id for r in reqs],
    )


def _parse_rows(handle) -> tuple[list, list, list]:
    ids, starts, ends = [], [], []
    header_seen = False
    for lineno, line in enumerate(handle, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        row = next(csv.reader([stripped]))
        if not header_seen and tuple(c.strip() for c in row) == HEADER:
            header_seen = True
            continue
        if len(row) != 3:
            raise TraceError(f"line {lineno}: expected 3 fields, got {len(row)}")
        rid = row[0].strip()
        try:
            s, e = int(row[1]), int(row[2])
        except ValueError:
            raise TraceError(f"line {lineno}: times must be integer minutes") from None
        if e <= s:
            raise TraceError(f"line {lineno}: end_time {e} <= start_time {s}")
        if s < 0:
            raise TraceError(f"line {lineno}: negative start_time")
        ids.append(rid)
        starts.append(s)
        ends.append(e)
    return ids, starts, ends


def load_trace(path, format: str = "csv", horizon: int | None = None) -> Trace:
    """Read a ``request_id,start_time,end_time`` CSV into a sorted trace.

    Without an explicit `horizon` the trace closes at its last termination.
    """
    if format != "csv":
        raise TraceError(f"unsupported trace format {format!r}")
    with open(path, encoding="utf-8", newline="") as fh:
        ids, starts, ends = _parse_rows(fh)
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise TraceError(f"duplicate request_id {dup!r}")
    order = np.argsort(np.asarray(starts, dtype=np.int64), kind="stable")
    s = np.asarray(starts, dtype=np.int64)[order]
    e = np.asarray(ends, dtype=np.int64)[order]
    if horizon is None:
        horizon = int(e.max()) if len(e) else 0
    elif len(e) and e.max() > horizon:
        raise TraceError("trace runs past the requested horizon")
    return Trace(s, e, horizon, ids=np.asarray(ids, dtype=object)[order])


def write_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(HEADER) + "\n")
        buf = io.StringIO()
        chunk = 1 << 18
        for lo in range(0, len(trace), chunk):
            hi = min(lo + chunk, len(trace))
            if trace.ids is None:
                names = (f"q{i}" for i in range(lo, hi))
            else:
                names = (str(x) for x in trace.ids[lo:hi])
            for name, s, e in zip(names, trace.start[lo:hi].tolist(), trace.end[lo:hi].tolist()):
                buf.write(f"{name},{s},{e}\n")
            fh.write(buf.getvalue())
            buf.seek(0)
            buf.truncate()


def trace_stats(t: Trace) -> TraceStats:
    counts = t.arrival_counts().astype(np.float64)
    if len(counts) == 0:
        return TraceStats(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    q25, q50, q75 = np.percentile(counts, [25, 50, 75])
    return TraceStats(
        n_points=len(counts),
        mean=float(counts.mean()),
        sd=float(counts.std()),
        min=float(counts.min()),
        max=float(counts.max()),
        q25=float(q25), q50=float(q50), q75=float(q75),
    )


def arrival_count_sampler(stats: TraceStats):
    """Per-minute count generator matching (mean, sd) by moment matching.

    Overdispersed profiles use a negative binomial, equidispersed a Poisson,
    underdispersed a binomial, and sd = 0 a constant.
    """
    problems = stats.problems()
    m, v = float(stats.mean), float(stats.sd) ** 2
    if v == 0 and m != int(m):
        problems.append("sd = 0 requires an integer mean")
    if 0 < v < m and m * m / (m - v) < 1:
        problems.append("variance too small for any binomial count model")
    if problems:
        raise TraceError("infeasible stats: " + "; ".join(problems))
    if m == 0:
        return lambda rng, n: np.zeros(n, dtype=np.int64)
    if v == 0:
        return lambda rng, n: np.full(n, int(m), dtype=np.int64)
    if v > m:
        r = m * m / (v - m)
        p = r / (r + m)
        return lambda rng, n: rng.negative_binomial(r, p, n).astype(np.int64)
    if v == m:
        return lambda rng, n: rng.poisson(m, n).astype(np.int64)
    trials = int(round(m * m / (m - v)))
    return lambda rng, n: rng.binomial(trials, m / trials, n).astype(np.int64)


def _assemble(counts: np.ndarray, durations_for, horizon: int) -> Trace:
    n = int(counts.sum())
    start = np.empty(n, dtype=np.int32)
    end = np.empty(n, dtype=np.int32)
    pos = 0
    step = DAY
    for lo in range(0, horizon, step):
        c = counts[lo:lo + step]
        k = int(c.sum())
        if not k:
            continue
        s = np.repeat(np.arange(lo, lo + len(c), dtype=np.int64), c)
        d = durations_for(k)
        start[pos:pos + k] = s
        end[pos:pos + k] = np.minimum(s + d, horizon)
        pos += k
    return Trace(start, end, horizon, validate=False)


def synthesize_trace(stats: TraceStats, durations: DurationModel | None = None,
                     horizon: int = DAY, seed: int = 0) -> Trace:
    """Synthetic trace whose per-minute arrivals reproduce stats.mean / stats.sd."""
    durations = durations or DurationModel()
    sampler = arrival_count_sampler(stats)
    rng = substream(seed, "trace/synthesize")
    counts = sampler(rng, horizon)
    return _assemble(counts, lambda k: durations.sample(rng, k), horizon)


def resample_trace(src: Trace, target_horizon: int, seed: int = 0,
                   block_len: int = HOUR) -> Trace:
    """Block bootstrap of `src` onto `target_horizon` minutes.

    Fixed blocks of arrivals are drawn with replacement and laid end to end;
    every resampled request takes a duration drawn from the source's
    empirical duration distribution.
    """
    if len(src) == 0:
        raise TraceError("cannot resample an empty trace")
    if target_horizon <= src.horizon:
        raise TraceError("target_horizon must exceed the source horizon")
    block_len = min(block_len, src.horizon)
    n_blocks = src.horizon // block_len
    counts = src.arrival_counts()[: n_blocks * block_len].reshape(n_blocks, block_len)
    pool = src.durations
    rng = substream(seed, "trace/resample")
    n_out = -(-target_horizon // block_len)
    picks = rng.integers(0, n_blocks, n_out)
    out_counts = counts[picks].reshape(-1)[:target_horizon]
    return _assemble(out_counts, lambda k: pool[rng.integers(0, len(pool), k)], target_horizon)


def parse_duration(text) -> int:
    """'90m', '12h', '8d', '3y' (12 x 30-day months) or bare minutes."""
    if isinstance(text, (int, np.integer)):
        return int(text)
    s = str(text).strip().lower()
    units = {"m": 1, "h": HOUR, "d": DAY, "w": 7 * DAY, "mo": 30 * DAY, "y": YEAR}
    for suffix in ("mo", "m", "h", "d", "w", "y"):
        if s.endswith(suffix) and s[: -len(suffix)].strip():
            num = s[: -len(suffix)].strip()
            try:
                value = float(num) * units[suffix]
            except ValueError:
                break
            if value != int(value):
                raise ValueError(f"duration {text!r} is not a whole number of minutes")
            return int(value)
    try:
        return int(s)
    except ValueError:
        raise ValueError(f"cannot parse duration {text!r}") from None


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


__all__ = [
    "DATASET1", "DATASET2", "PROFILES", "DurationModel", "Trace", "TraceError",
    "TraceStats", "file_digest", "from_requests", "load_trace", "parse_duration",
    "resample_trace", "synthesize_trace", "trace_stats", "write_trace",
]
