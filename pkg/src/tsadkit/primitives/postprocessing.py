"""Postprocessing primitives: residual errors and dynamic-threshold extraction."""

from __future__ import annotations

import numpy as np

from ..core import Event, EventList
from ..errors import ShapeMismatch


def regression_errors(actual: np.ndarray, predicted: np.ndarray,
                      smooth: bool = False, ewma_alpha: float = 0.1) -> np.ndarray:
    """Point-wise absolute error averaged over channels, optionally EWMA-smoothed.

    Rows of `actual` align to target timestamps; for reconstruction outputs the
    per-row mean runs over the whole window."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape:
        raise ShapeMismatch(f"actual {actual.shape} vs predicted {predicted.shape}")
    diff = np.abs(predicted - actual)
    e = diff.reshape(diff.shape[0], -1).mean(axis=1)
    if smooth:
        e = ewma(e, ewma_alpha)
    return e


def ewma(e: np.ndarray, alpha: float) -> np.ndarray:
    out = np.empty_like(e)
    out[0] = e[0]
    for i in range(1, len(e)):
        out[i] = alpha * e[i] + (1 - alpha) * out[i - 1]
    return out


def _contiguous_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True, as inclusive (start, end) index pairs."""
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def threshold_score(e: np.ndarray, z: float) -> float | None:
    """Score one candidate threshold mu + z*sigma; None when nothing exceeds it.

    Reward the relative drop in mean and sd once exceedances are removed,
    penalized by the exceedance count plus the squared number of runs."""
    mu, sd = e.mean(), e.std()
    eps = mu + z * sd
    above = e > eps
    n_above = int(above.sum())
    if n_above == 0 or n_above == len(e):
        return None
    below = e[~above]
    delta_mu = mu - below.mean()
    delta_sd = sd - below.std()
    n_runs = len(_contiguous_runs(above))
    return (delta_mu / mu + delta_sd / sd) / (n_above + n_runs ** 2)


def find_anomalies(e: np.ndarray, target_timestamps: np.ndarray,
                   z_min: float = 2.0, z_max: float = 10.0, z_step: float = 0.5,
                   prune_p: float = 0.13, min_gap_samples: int = 1) -> EventList:
    """Dynamic-threshold anomaly extraction over an error vector.

    Sweeps thresholds mu + z*sigma over the z grid, keeps the best-scoring one
    (ties to the larger z), merges nearby exceedance runs, prunes trailing
    events whose peak error is not meaningfully below the previous peak, and
    maps surviving runs to timestamp intervals with severities."""
    e = np.asarray(e, dtype=np.float64)
    if e.size == 0:
        raise ValueError("empty error vector")
    if not np.all(np.isfinite(e)):
        raise ValueError("error vector must be finite")
    ts = np.asarray(target_timestamps, dtype=np.int64)
    if ts.shape[0] != e.shape[0]:
        raise ShapeMismatch(f"{e.shape[0]} errors vs {ts.shape[0]} timestamps")
    mu, sd = e.mean(), e.std()
    if sd == 0:
        return EventList(())

    best_z, best_score = None, -np.inf
    z = z_min
    while z <= z_max + 1e-9:
        score = threshold_score(e, z)
        if score is not None and score >= best_score:
            best_score, best_z = score, z
        z += z_step
    if best_z is None:
        return EventList(())

    eps = mu + best_z * sd
    runs = _contiguous_runs(e > eps)

    # merge runs separated by fewer than min_gap_samples below-threshold points
    merged = [runs[0]]
    for start, end in runs[1:]:
        prev_start, prev_end = merged[-1]
        if start - prev_end - 1 < min_gap_samples:
            merged[-1] = (prev_start, end)
        else:
            merged.append((start, end))

    # prune: order by peak error descending; keep everything up to the last
    # significant relative decrease
    peaks = [float(e[s:t + 1].max()) for s, t in merged]
    order = sorted(range(len(merged)), key=lambda i: -peaks[i])
    sorted_peaks = [peaks[i] for i in order]
    last_keep = None
    for i in range(len(sorted_peaks) - 1):
        d = (sorted_peaks[i] - sorted_peaks[i + 1]) / sorted_peaks[i]
        if d > prune_p:
            last_keep = i + 1
    keep = set(order) if last_keep is None else set(order[:last_keep])

    dt = int(np.median(np.diff(ts))) if len(ts) > 1 else 1
    dt = max(dt, 1)
    events = []
    for idx, (s, t) in enumerate(merged):
        if idx not in keep:
            continue
        t_s = int(ts[s])
        t_e = int(ts[t]) if t > s else int(ts[s]) + dt
        severity = (peaks[idx] - eps) / sd
        events.append(Event(t_s=t_s, t_e=t_e, severity=float(severity)))
    return EventList(tuple(events))
