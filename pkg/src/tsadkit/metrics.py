"""Segment-based quality metrics for interval anomalies.

Two complementary views: a strict duration-weighted confusion matrix over the
partition induced by interval edges, and a lenient count-based view where any
intersection with a true interval counts as a hit.  All interval arithmetic is
exact on integer timestamps; intervals are closed, so a boundary touch counts
as overlap in the count-based view (it has zero measure in the weighted one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import EventList
from .errors import IntervalOutOfSpan


@dataclass(frozen=True)
class ConfusionWeights:
    tp: float
    fp: float
    fn: float
    tn: float = 0.0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion weights must be nonnegative")


@dataclass(frozen=True)
class Scores:
    precision: float  # NaN when undefined (zero denominator)
    recall: float
    f1: float


def weighted_segment(truth: EventList, pred: EventList, span: tuple[int, int]) -> ConfusionWeights:
    """Duration-weighted confusion matrix over [t0, t1].

    The span is partitioned at every interval edge; each segment's length
    accrues to exactly one cell, so tp+fp+fn+tn equals the span length."""
    t0, t1 = span
    if t0 >= t1:
        raise ValueError(f"bad span ({t0}, {t1})")
    for name, events in (("truth", truth), ("pred", pred)):
        for e in events:
            if e.t_s < t0 or e.t_e > t1:
                raise IntervalOutOfSpan(f"{name} interval [{e.t_s}, {e.t_e}] outside span ({t0}, {t1})")

    edges = {t0, t1}
    for e in truth:
        edges.update((e.t_s, e.t_e))
    for e in pred:
        edges.update((e.t_s, e.t_e))
    cuts = sorted(edges)

    tp = fp = fn = tn = 0
    for a, b in zip(cuts, cuts[1:]):
        length = b - a
        in_truth = any(e.t_s <= a and b <= e.t_e for e in truth)
        in_pred = any(e.t_s <= a and b <= e.t_e for e in pred)
        if in_truth and in_pred:
            tp += length
        elif in_pred:
            fp += length
        elif in_truth:
            fn += length
        else:
            tn += length
    return ConfusionWeights(tp=tp, fp=fp, fn=fn, tn=tn)


def overlapping_segment(truth: EventList, pred: EventList) -> ConfusionWeights:
    """Count-based evaluation rewarding any intersection with a true interval.

    tp = true intervals hit by some prediction, fn = true intervals missed,
    fp = predictions hitting nothing; tn is not meaningful and is set to 0."""
    tp = fn = 0
    for t in truth:
        if any(t.overlaps(p) for p in pred):
            tp += 1
        else:
            fn += 1
    fp = sum(1 for p in pred if not any(p.overlaps(t) for t in truth))
    return ConfusionWeights(tp=tp, fp=fp, fn=fn, tn=0)


def score_from_confusion(c: ConfusionWeights) -> Scores:
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else math.nan
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else math.nan
    if math.isnan(precision) or math.isnan(recall):
        f1 = math.nan
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Scores(precision=precision, recall=recall, f1=f1)
