"""Annotation-driven retraining: turn human verdicts into labeled windows,
retrain the window classifier in batches, and simulate annotators so the whole
loop can be evaluated without a human."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Event, EventList, Signal
from .errors import SingleClassData
from .metrics import overlapping_segment, score_from_confusion
from .pipeline import Pipeline, detect, fit
from .primitives import windows_to_events
from .primitives.modeling import (
    LogisticModel,
    fit_logistic_windows,
    logistic_predict_proba,
)
from .primitives.preprocessing import make_windows

RETRAIN_BATCH_SIZE = 4  # default size-threshold retrain trigger


@dataclass(frozen=True)
class LabeledWindow:
    window: np.ndarray  # (w, m)
    label: str          # anomalous | normal
    origin_event: Event


def build_training_set(signal: Signal, annotated_events: list[tuple[Event, str]],
                       window_size: int, step: int = 1) -> list[LabeledWindow]:
    """Windows fully inside a confirmed event become anomalous examples; fully
    inside a normal-tagged event's span, normal examples.  Windows straddling a
    boundary or touching an 'investigate' event are excluded."""
    windows, _, _ = make_windows(signal.values, signal.timestamps,
                                 window_size, step=step, horizon=0)
    ts = signal.timestamps
    starts = [i * step for i in range(windows.shape[0])]
    out: list[LabeledWindow] = []
    for w_idx, start in enumerate(starts):
        w_t0, w_t1 = int(ts[start]), int(ts[start + window_size - 1])
        label = None
        excluded = False
        for event, tag in annotated_events:
            inside = event.t_s <= w_t0 and w_t1 <= event.t_e
            touches = event.t_s <= w_t1 and w_t0 <= event.t_e
            if tag == "investigate":
                if touches:
                    excluded = True
                    break
                continue
            if inside:
                label = ("anomalous" if tag == "confirmed" else "normal", event)
            elif touches:
                excluded = True  # straddles a boundary
                break
        if excluded or label is None:
            continue
        out.append(LabeledWindow(window=windows[w_idx], label=label[0],
                                 origin_event=label[1]))
    return out


def retrain_semisupervised(labeled: list[LabeledWindow], lr: float = 0.5,
                           epochs: int = 500, seed: int = 0) -> LogisticModel:
    if not labeled:
        raise SingleClassData("no labeled windows")
    windows = np.stack([lw.window for lw in labeled])
    labels = np.array([1.0 if lw.label == "anomalous" else 0.0 for lw in labeled])
    return fit_logistic_windows(windows, labels, lr=lr, epochs=epochs, seed=seed)


def classify_detect(model: LogisticModel, signal: Signal, window_size: int,
                    step: int = 1, merge: int = 1, threshold: float = 0.5) -> EventList:
    windows, _, target_ts = make_windows(signal.values, signal.timestamps,
                                         window_size, step=step, horizon=0)
    proba = logistic_predict_proba(model, windows)
    events = windows_to_events(proba, target_ts, threshold=threshold, merge_gap=merge)
    # clamp to the signal span
    t_last = int(signal.timestamps[-1])
    clamped = [Event(e.t_s, min(e.t_e, t_last), e.severity, e.source)
               for e in events if min(e.t_e, t_last) > e.t_s]
    return EventList(tuple(clamped))


@dataclass
class AnnotatorState:
    """Work queue of the simulated annotator: detected events first (severity
    descending), then truth events the detector missed."""

    queue: list[tuple[Event, str]]  # (event, verdict in confirmed|normal|add)
    position: int = 0

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self.queue)


def start_annotator(truth: EventList, detected: EventList) -> AnnotatorState:
    queue: list[tuple[Event, str]] = []
    for event in sorted(detected, key=lambda e: -e.severity):
        verdict = "confirmed" if any(event.overlaps(t) for t in truth) else "normal"
        queue.append((event, verdict))
    for t in truth:
        if not any(t.overlaps(d) for d in detected):
            manual = Event(t_s=t.t_s, t_e=t.t_e, severity=t.severity, source="manual")
            queue.append((manual, "add"))
    return AnnotatorState(queue=queue)


def simulate_annotator(state: AnnotatorState, k: int) -> list[tuple[Event, str]]:
    """Consume up to k queue items; an empty result is the stop condition."""
    if k < 1:
        raise ValueError("k must be >= 1")
    batch = state.queue[state.position:state.position + k]
    state.position += len(batch)
    return batch


def _subtract_spans(t0: int, t1: int, avoid) -> list[tuple[int, int]]:
    """Remove avoid-overlapping parts of [t0, t1] (closed)."""
    pieces = [(t0, t1)]
    for ev in avoid:
        nxt = []
        for a, b in pieces:
            if ev.t_e < a or ev.t_s > b:
                nxt.append((a, b))
                continue
            if a < ev.t_s:
                nxt.append((a, ev.t_s - 1))
            if ev.t_e < b:
                nxt.append((ev.t_e + 1, b))
        pieces = nxt
    return pieces


def confirmed_normal_regions(annotated: list[tuple[Event, str]], truth: EventList,
                             signal: Signal, window_size: int) -> list[Event]:
    """Verified-normal spans implied by the annotations so far.

    Deciding where an anomaly starts and ends (or that a detection is spurious)
    means the annotator inspected the surrounding context, so the flanks of
    every annotated event are verified normal.  Flanks are clipped to the
    signal span and against ground truth, which stands in for the annotator's
    view of the chart."""
    ts = signal.timestamps
    dt = int(np.median(np.diff(ts))) if len(ts) > 1 else 1
    t_lo, t_hi = int(ts[0]), int(ts[-1])
    margin = 2 * window_size * dt
    avoid = list(truth) + [e for e, tag in annotated if tag != "normal"]
    spans: list[tuple[int, int]] = []
    for event, tag in annotated:
        if tag == "investigate":
            continue
        if tag == "normal":
            # the whole detected span plus its vicinity is verified normal
            raw = [(event.t_s - margin, event.t_e + margin)]
        else:
            raw = [(event.t_s - margin, event.t_s - dt),
                   (event.t_e + dt, event.t_e + margin)]
        for a, b in raw:
            a, b = max(a, t_lo), min(b, t_hi)
            if a > b:
                continue
            spans.extend(_subtract_spans(a, b, avoid))
    # coalesce so adjacent flanks do not shadow each other's windows
    spans.sort()
    merged: list[list[int]] = []
    for a, b in spans:
        if merged and a <= merged[-1][1] + dt:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [Event(t_s=a, t_e=b, source="manual") for a, b in merged if b > a]


@dataclass(frozen=True)
class TrajectoryPoint:
    iteration: int
    n_annotations: int
    f1_semi: float
    f1_unsup: float

    def to_dict(self):
        return {"iter": self.iteration, "n_annotations": self.n_annotations,
                "f1_semi": self.f1_semi, "f1_unsup": self.f1_unsup}


def _overlap_f1(truth: EventList, pred: EventList) -> float:
    score = score_from_confusion(overlapping_segment(truth, pred)).f1
    return score if math.isfinite(score) else 0.0


def run_feedback_loop(signal_train: Signal, truth_train: EventList,
                      signal_test: Signal, truth_test: EventList,
                      unsupervised: Pipeline, k: int = 2, max_iters: int = 50,
                      seed: int = 0, window_size: int = 20,
                      step: int = 1) -> list[TrajectoryPoint]:
    """Warm-start from the unsupervised detector, then feed simulated
    annotations to the window classifier batch by batch.

    The unsupervised pipeline is never retrained, so its test F1 is constant;
    the classifier's F1 may dip or plateau, and only the final comparison is
    meaningful."""
    fitted = fit(unsupervised, signal_train)
    detected_train = detect(fitted, signal_train)
    fitted_test = detect(fitted, signal_test)
    f1_unsup = _overlap_f1(truth_test, fitted_test)

    trajectory = [TrajectoryPoint(iteration=0, n_annotations=0, f1_semi=0.0,
                                  f1_unsup=f1_unsup)]
    state = start_annotator(truth_train, detected_train)
    annotated: list[tuple[Event, str]] = []
    model = None
    iteration = 0
    while iteration < max_iters:
        batch = simulate_annotator(state, k)
        if not batch:
            break
        iteration += 1
        for event, verdict in batch:
            tag = "confirmed" if verdict == "add" else verdict
            annotated.append((event, tag))
        regions = confirmed_normal_regions(annotated, truth_train, signal_train,
                                           window_size)
        # expanded regions supersede the raw normal-tagged detections
        label_events = [(e, t) for e, t in annotated if t != "normal"]
        label_events += [(r, "normal") for r in regions]
        labeled = build_training_set(signal_train, label_events, window_size, step)
        try:
            model = retrain_semisupervised(labeled, seed=seed)
        except SingleClassData:
            model = model  # keep the previous model until both classes exist
        if model is not None:
            pred_test = classify_detect(model, signal_test, window_size, step)
            f1_semi = _overlap_f1(truth_test, pred_test)
        else:
            f1_semi = 0.0
        trajectory.append(TrajectoryPoint(iteration=iteration,
                                          n_annotations=len(annotated),
                                          f1_semi=f1_semi, f1_unsup=f1_unsup))
    return trajectory


def trajectory_to_jsonl(trajectory: list[TrajectoryPoint]) -> str:
    return "\n".join(json.dumps(p.to_dict()) for p in trajectory) + "\n"
