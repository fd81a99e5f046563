"""Canonical signal / event types, CSV ingestion, slicing, and synthetic data.

Timestamps are integer Unix seconds throughout; sub-second data must be
pre-scaled by the caller.  Missing values are kept as NaN at load time --
imputation is a pipeline step, not an ingestion concern.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateTimestamp,
    EmptySignal,
    EmptySlice,
    InfeasibleSpec,
    MalformedCsv,
)


@dataclass(frozen=True)
class Signal:
    """A univariate or multivariate series on a strictly increasing time axis."""

    name: str
    timestamps: np.ndarray  # shape (n,), int64, strictly increasing
    values: np.ndarray      # shape (n, m), float64, NaN = missing
    source_uri: str | None = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        if ts.shape[0] < 2:
            raise EmptySignal(f"signal '{self.name}' has {ts.shape[0]} samples, need >= 2")
        if vals.shape[0] != ts.shape[0]:
            raise MalformedCsv(
                f"signal '{self.name}': {ts.shape[0]} timestamps vs {vals.shape[0]} value rows"
            )
        if vals.shape[1] < 1:
            raise MalformedCsv(f"signal '{self.name}' has no value channels")
        diffs = np.diff(ts)
        if np.any(diffs == 0):
            raise DuplicateTimestamp(f"signal '{self.name}' has duplicate timestamps")
        if np.any(diffs < 0):
            raise MalformedCsv(f"signal '{self.name}' timestamps not increasing")
        ts.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.timestamps.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, order=True)
class Event:
    """A closed anomalous interval [t_s, t_e] with a nonnegative severity."""

    t_s: int
    t_e: int
    severity: float = 0.0
    source: str = "detected"  # detected | manual

    def __post_init__(self):
        if self.t_s >= self.t_e:
            raise ValueError(f"event requires t_s < t_e, got [{self.t_s}, {self.t_e}]")
        if self.severity < 0:
            raise ValueError("severity must be >= 0")
        if self.source not in ("detected", "manual"):
            raise ValueError(f"bad event source {self.source!r}")

    def overlaps(self, other: "Event") -> bool:
        # closed intervals: boundary touch counts
        return self.t_s <= other.t_e and other.t_s <= self.t_e


@dataclass(frozen=True)
class EventList:
    """Events sorted ascending by start time."""

    events: tuple[Event, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: (e.t_s, e.t_e))))

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, i):
        return self.events[i]

    def intervals(self) -> list[tuple[int, int]]:
        return [(e.t_s, e.t_e) for e in self.events]


def load_signal_csv(path, name: str | None = None, timestamp_column: str = "timestamp") -> Signal:
    """Parse a signal CSV: `timestamp` column plus `value` or `value_0..value_{m-1}`.

    Rows are sorted by timestamp if out of order; duplicate timestamps are a
    hard error; empty value cells become NaN.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_signal_csv(text, name=name or str(path), source_uri=str(path),
                            timestamp_column=timestamp_column)


def parse_signal_csv(text: str, name: str = "signal", source_uri: str | None = None,
                     timestamp_column: str = "timestamp") -> Signal:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedCsv("empty file")
    header = [h.strip() for h in header]
    if timestamp_column not in header:
        raise MalformedCsv(f"missing '{timestamp_column}' column in header {header}")
    ts_idx = header.index(timestamp_column)
    if "value" in header:
        value_cols = [header.index("value")]
    else:
        value_cols = [i for i, h in enumerate(header) if h.startswith("value_")]
        value_cols.sort(key=lambda i: int(header[i].split("_", 1)[1]))
    if not value_cols:
        raise MalformedCsv(f"no value columns in header {header}")

    timestamps, rows = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise MalformedCsv(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        raw_ts = row[ts_idx].strip()
        try:
            ts = int(raw_ts)
        except ValueError:
            raise MalformedCsv(f"line {lineno}: bad timestamp {raw_ts!r}")
        vals = []
        for ci in value_cols:
            cell = row[ci].strip()
            if cell == "":
                vals.append(np.nan)
            else:
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise MalformedCsv(f"line {lineno}: bad value {cell!r}")
        timestamps.append(ts)
        rows.append(vals)

    if len(timestamps) < 2:
        raise EmptySignal(f"{name}: {len(timestamps)} rows, need >= 2")
    ts = np.array(timestamps, dtype=np.int64)
    vals = np.array(rows, dtype=np.float64)
    order = np.argsort(ts, kind="stable")
    ts, vals = ts[order], vals[order]
    if np.any(np.diff(ts) == 0):
        raise DuplicateTimestamp(f"{name}: duplicate timestamps")
    return Signal(name=name, timestamps=ts, values=vals, source_uri=source_uri)


def write_signal_csv(signal: Signal, path=None) -> str:
    """Render a signal in canonical CSV form (LF endings); optionally write it."""
    buf = io.StringIO()
    if signal.m == 1:
        buf.write("timestamp,value\n")
    else:
        buf.write("timestamp," + ",".join(f"value_{i}" for i in range(signal.m)) + "\n")
    for ts, row in zip(signal.timestamps, signal.values):
        cells = ["" if np.isnan(v) else repr(float(v)) for v in row]
        buf.write(f"{int(ts)}," + ",".join(cells) + "\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def slice_signal(signal: Signal, t0: int, t1: int) -> Signal:
    """Restrict a signal to timestamps in [t0, t1]; at least 2 samples must remain."""
    if t0 >= t1:
        raise EmptySlice(f"bad slice bounds [{t0}, {t1}]")
    mask = (signal.timestamps >= t0) & (signal.timestamps <= t1)
    if mask.sum() < 2:
        raise EmptySlice(f"slice [{t0}, {t1}] keeps {int(mask.sum())} samples")
    return Signal(name=signal.name, timestamps=signal.timestamps[mask],
                  values=signal.values[mask], source_uri=signal.source_uri)


def load_events_csv(path) -> EventList:
    """Read an anomaly CSV with header t_s,t_e and optional severity column."""
    events = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "t_s" not in reader.fieldnames or "t_e" not in reader.fieldnames:
            raise MalformedCsv(f"{path}: expected header with t_s,t_e")
        for row in reader:
            sev = float(row["severity"]) if row.get("severity") not in (None, "") else 0.0
            events.append(Event(t_s=int(row["t_s"]), t_e=int(row["t_e"]), severity=sev))
    return EventList(tuple(events))


def write_events_csv(events: EventList, path=None, severity: bool = True) -> str:
    buf = io.StringIO()
    if severity:
        buf.write("t_s,t_e,severity\n")
        for e in events:
            buf.write(f"{e.t_s},{e.t_e},{repr(float(e.severity))}\n")
    else:
        buf.write("t_s,t_e\n")
        for e in events:
            buf.write(f"{e.t_s},{e.t_e}\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


@dataclass(frozen=True)
class AnomalySpec:
    count: int = 3
    kind: str = "spike"  # spike | level_shift | dropout
    min_len: int = 2
    max_len: int = 20
    amp_sd: float = 12.0  # peak deviation in units of noise_sd


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 1000
    m: int = 1
    base: str = "sine"  # sine | ar1 | flat
    noise_sd: float = 0.05
    anomalies: AnomalySpec = field(default_factory=AnomalySpec)
    seed: int = 0
    interval: int = 1  # seconds between samples
    t0: int = 0


def _base_process(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    n, m = spec.n, spec.m
    t = np.arange(n)
    base = np.zeros((n, m))
    for c in range(m):
        if spec.base == "sine":
            period = n / (6 + c)
            base[:, c] = np.sin(2 * np.pi * t / period)
        elif spec.base == "ar1":
            phi = 0.9
            eps = rng.normal(0, 0.1, size=n)
            x = np.zeros(n)
            for i in range(1, n):
                x[i] = phi * x[i - 1] + eps[i]
            base[:, c] = x
        elif spec.base == "flat":
            base[:, c] = 0.0
        else:
            raise ValueError(f"unknown base process {spec.base!r}")
    return base


def generate_synthetic(spec: SyntheticSpec) -> tuple[Signal, EventList]:
    """Deterministically synthesize a signal plus exact ground-truth anomalies.

    Injected intervals are disjoint and every injected interval deviates from
    the base process by at least 4 * noise_sd at its peak (enforced, so the
    ground truth is detectable by construction).
    """
    if spec.n < 100:
        raise InfeasibleSpec(f"n={spec.n} < 100")
    a = spec.anomalies
    rng = np.random.default_rng(spec.seed)
    base = _base_process(spec, rng)
    noise = rng.normal(0, spec.noise_sd, size=base.shape) if spec.noise_sd > 0 else np.zeros_like(base)
    values = base + noise

    # place disjoint intervals, keeping a margin from the signal edges
    placed: list[tuple[int, int]] = []
    margin = max(a.max_len, spec.n // 50)
    for _ in range(a.count):
        ok = False
        for _attempt in range(200):
            length = int(rng.integers(a.min_len, a.max_len + 1))
            start = int(rng.integers(margin, spec.n - margin - length))
            end = start + length - 1
            if all(end < s - 2 or start > e + 2 for s, e in placed):
                placed.append((start, end))
                ok = True
                break
        if not ok:
            raise InfeasibleSpec(f"could not place {a.count} disjoint anomalies of "
                                 f"length {a.min_len}..{a.max_len} in n={spec.n}")
    placed.sort()

    floor_dev = 4.0 * spec.noise_sd
    for start, end in placed:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        # narrow amplitude spread keeps peak errors comparable across events,
        # so dynamic-threshold pruning does not discard real anomalies
        amp = (a.amp_sd + 0.5 * rng.random()) * spec.noise_sd
        if amp == 0.0:
            amp = 1.0  # noiseless signals still need a visible deviation
        sl = np.s_[start:end + 1]
        if a.kind == "spike":
            # alternating-sign burst: every sample of the interval deviates and
            # no smooth forecaster can track it
            length = end - start + 1
            burst = np.where(np.arange(length) % 2 == 0, 1.0, -1.0)
            values[sl] = values[sl] + sign * amp * burst[:, None]
        elif a.kind == "level_shift":
            values[sl] = values[sl] + sign * amp
        elif a.kind == "dropout":
            values[sl] = sign * 0.0 + noise[sl] * 0.1 - amp
        else:
            raise ValueError(f"unknown anomaly kind {a.kind!r}")
        # guarantee the promised deviation from the base process
        dev = np.max(np.abs(values[sl] - base[sl]))
        if floor_dev > 0 and dev < floor_dev:
            scale = (floor_dev * 1.25) / max(dev, 1e-12)
            values[sl] = base[sl] + (values[sl] - base[sl]) * scale

    timestamps = spec.t0 + spec.interval * np.arange(spec.n, dtype=np.int64)
    signal = Signal(name=f"synthetic-{spec.base}-{spec.seed}", timestamps=timestamps, values=values)
    events = EventList(tuple(
        Event(t_s=int(timestamps[s]), t_e=int(timestamps[e]), severity=0.0)
        for s, e in placed
    ))
    return signal, events
