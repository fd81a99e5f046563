"""Preprocessing primitives: regularization, imputation, scaling, windowing."""

from __future__ import annotations

import numpy as np

from ..core import Signal
from ..errors import AllMissingChannel, ShapeMismatch, SignalTooShort


def time_segments_aggregate(signal: Signal, interval: int, method: str = "mean") -> Signal:
    """Resample onto a regular grid t0, t0+interval, ... by aggregating each
    bucket [t, t+interval) per channel. Empty buckets yield NaN; NaN inputs
    are excluded from the aggregate."""
    if interval <= 0:
        raise ValueError(f"interval must be > 0, got {interval}")
    if method not in ("mean", "median"):
        raise ValueError(f"unknown aggregation method {method!r}")
    ts, vals = signal.timestamps, signal.values
    t0, t_last = int(ts[0]), int(ts[-1])
    n_buckets = (t_last - t0) // interval + 1
    out_ts = t0 + interval * np.arange(n_buckets, dtype=np.int64)
    out = np.full((n_buckets, signal.m), np.nan)
    bucket = (ts - t0) // interval
    agg = np.nanmean if method == "mean" else np.nanmedian
    for b in range(n_buckets):
        rows = vals[bucket == b]
        if rows.size == 0:
            continue
        with np.errstate(invalid="ignore"):
            out[b] = agg(rows, axis=0)
    return Signal(name=signal.name, timestamps=out_ts, values=out, source_uri=signal.source_uri)


def impute_mean(values: np.ndarray) -> np.ndarray:
    """Replace NaNs with the per-channel mean of the non-NaN entries."""
    values = np.asarray(values, dtype=np.float64)
    out = values.copy()
    for c in range(values.shape[1]):
        col = values[:, c]
        mask = np.isnan(col)
        if mask.all():
            raise AllMissingChannel(f"channel {c} is entirely NaN")
        if mask.any():
            out[mask, c] = col[~mask].mean()
    return out


def scale_minmax(values: np.ndarray, lo: float = -1.0, hi: float = 1.0):
    """Per-channel linear map [min, max] -> [lo, hi]; constant channels map to
    the midpoint. Returns (scaled, params) where params supports the inverse."""
    if lo >= hi:
        raise ValueError(f"need lo < hi, got ({lo}, {hi})")
    values = np.asarray(values, dtype=np.float64)
    cmin = np.nanmin(values, axis=0)
    cmax = np.nanmax(values, axis=0)
    params = {"min": cmin, "max": cmax, "lo": lo, "hi": hi}
    return apply_scale(values, params), params


def apply_scale(values: np.ndarray, params) -> np.ndarray:
    cmin, cmax = np.asarray(params["min"]), np.asarray(params["max"])
    lo, hi = params["lo"], params["hi"]
    span = cmax - cmin
    out = np.empty_like(np.asarray(values, dtype=np.float64))
    for c in range(out.shape[1]):
        if span[c] == 0:
            col = np.asarray(values)[:, c]
            out[:, c] = np.where(np.isnan(col), np.nan, (lo + hi) / 2.0)
        else:
            out[:, c] = lo + (np.asarray(values)[:, c] - cmin[c]) * (hi - lo) / span[c]
    return out


def inverse_scale(scaled: np.ndarray, params) -> np.ndarray:
    cmin, cmax = np.asarray(params["min"]), np.asarray(params["max"])
    lo, hi = params["lo"], params["hi"]
    span = cmax - cmin
    scaled = np.asarray(scaled, dtype=np.float64)
    out = np.empty_like(scaled)
    for c in range(out.shape[1]):
        if span[c] == 0:
            out[:, c] = np.where(np.isnan(scaled[:, c]), np.nan, cmin[c])
        else:
            out[:, c] = cmin[c] + (scaled[:, c] - lo) * span[c] / (hi - lo)
    return out


def window_starts(n: int, window_size: int, step: int, horizon: int) -> list[int]:
    """Valid window start offsets; the oracle for the window count is exactly
    this enumeration."""
    starts = []
    i = 0
    while True:
        start = i * step
        if horizon >= 1:
            if start + window_size + horizon - 1 > n - 1:
                break
        else:
            if start + window_size > n:
                break
        starts.append(start)
        i += 1
    return starts


def make_windows(values: np.ndarray, timestamps: np.ndarray, window_size: int,
                 step: int = 1, horizon: int = 1):
    """Build (windows, targets, target_timestamps).

    horizon >= 1: forecasting -- target i is the row `horizon` past the window
    end. horizon == 0: reconstruction -- the target is the window itself and
    target timestamps are the window end times.
    """
    if window_size < 1 or step < 1 or horizon < 0:
        raise ValueError("window_size >= 1, step >= 1, horizon >= 0 required")
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    starts = window_starts(n, window_size, step, horizon)
    if not starts:
        raise SignalTooShort(f"n={n} yields no windows (w={window_size}, s={step}, h={horizon})")
    windows = np.stack([values[s:s + window_size] for s in starts])
    if horizon >= 1:
        idx = [s + window_size + horizon - 1 for s in starts]
        targets = values[idx]
        target_ts = np.asarray(timestamps)[idx]
    else:
        targets = windows.copy()
        target_ts = np.asarray(timestamps)[[s + window_size - 1 for s in starts]]
    return windows, targets, target_ts.astype(np.int64)
