"""Postprocessing: regression errors, EWMA, dynamic-threshold anomaly extraction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsadkit.errors import ShapeMismatch
from tsadkit.primitives.postprocessing import (
    ewma,
    find_anomalies,
    regression_errors,
    threshold_score,
)


class TestRegressionErrors:
    def test_absolute_difference(self):
        e = regression_errors(np.array([[1.0], [2.0], [3.0]]),
                              np.array([[1.0], [2.0], [5.0]]))
        assert e.tolist() == [0.0, 0.0, 2.0]

    def test_perfect_prediction_zero(self):
        x = np.arange(5.0).reshape(-1, 1)
        assert regression_errors(x, x, smooth=True, ewma_alpha=0.3).tolist() == [0.0] * 5

    def test_ewma_example(self):
        # e=[0,0,4], alpha=0.5 -> [0,0,2]
        assert ewma(np.array([0.0, 0.0, 4.0]), 0.5).tolist() == [0.0, 0.0, 2.0]

    def test_channel_mean(self):
        actual = np.array([[1.0, 1.0]])
        predicted = np.array([[3.0, 5.0]])
        assert regression_errors(actual, predicted).tolist() == [3.0]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            regression_errors(np.zeros((3, 1)), np.zeros((4, 1)))


def _oracle_best_z(e, z_min=2.0, z_max=10.0, z_step=0.5):
    """Direct re-implementation of the grid scoring for cross-checking."""
    mu, sigma = e.mean(), e.std()
    best, best_z = None, None
    z = z_min
    while z <= z_max + 1e-9:
        eps = mu + z * sigma
        above = e > eps
        if above.any() and not above.all():
            kept = e[~above]
            d_mu = mu - kept.mean()
            d_sigma = sigma - kept.std()
            runs = np.diff(np.flatnonzero(np.diff(np.concatenate(
                [[0], above.view(np.int8), [0]])))).size // 2 + 0
            # count maximal runs directly
            padded = np.concatenate([[False], above, [False]])
            n_runs = int(np.sum(~padded[:-1] & padded[1:]))
            score = (d_mu / mu + d_sigma / sigma) / (above.sum() + n_runs ** 2)
            if best is None or score >= best:  # ties -> larger z
                best, best_z = score, z
        z += z_step
    return best_z


class TestFindAnomalies:
    def test_sigma_zero_empty(self):
        ts = np.arange(10, dtype=np.int64)
        assert len(find_anomalies(np.full(10, 3.0), ts)) == 0

    def test_single_run_detected(self):
        rng = np.random.default_rng(0)
        e = 0.1 * rng.random(200)
        e[100:110] = 5.0
        ts = np.arange(200, dtype=np.int64)
        events = find_anomalies(e, ts)
        assert len(events) == 1
        assert events[0].t_s == 100 and events[0].t_e == 109
        # oracle: brute-force the z-grid scoring
        z_star = _oracle_best_z(e)
        eps = e.mean() + z_star * e.std()
        assert np.all(e[100:110] > eps)

    def test_pruning_keeps_close_peaks(self):
        rng = np.random.default_rng(1)
        e = 0.1 * rng.random(300)
        e[50:55] = 5.0
        e[200:205] = 4.9
        ts = np.arange(300, dtype=np.int64)
        events = find_anomalies(e, ts, prune_p=0.13)
        assert len(events) == 2

    def test_pruning_drops_small_second_peak(self):
        rng = np.random.default_rng(1)
        e = 0.01 * rng.random(300)
        e[50:55] = 5.0
        e[200:205] = 1.0
        ts = np.arange(300, dtype=np.int64)
        events = find_anomalies(e, ts, prune_p=0.13)
        assert len(events) == 1
        assert events[0].t_s == 50

    def test_events_disjoint_sorted_above_threshold(self):
        rng = np.random.default_rng(2)
        e = np.abs(rng.normal(0, 0.1, 500))
        e[100:105] = 4.0
        e[300:310] = 3.9
        ts = np.arange(500, dtype=np.int64)
        events = find_anomalies(e, ts)
        for a, b in zip(events, list(events)[1:]):
            assert a.t_e < b.t_s
        for ev in events:
            assert np.max(e[ev.t_s:ev.t_e + 1]) > e.mean() + 2.0 * e.std() - 1e-12

    def test_severity_positive(self):
        rng = np.random.default_rng(3)
        e = 0.1 * rng.random(200)
        e[50:60] = 6.0
        ts = np.arange(200, dtype=np.int64)
        events = find_anomalies(e, ts)
        assert all(ev.severity > 0 for ev in events)

    def test_gap_merging(self):
        rng = np.random.default_rng(4)
        e = 0.01 * rng.random(200)
        e[100:103] = 5.0
        e[103] = 0.0  # dip inside
        e[104:107] = 5.0
        ts = np.arange(200, dtype=np.int64)
        events = find_anomalies(e, ts, min_gap_samples=2)
        assert len(events) == 1
        assert events[0].t_s == 100 and events[0].t_e == 106


@given(st.floats(min_value=0.1, max_value=100.0))
@settings(max_examples=40, deadline=None)
def test_scale_invariance_of_selected_z(a):
    # z* is invariant under positive scaling of the error vector
    rng = np.random.default_rng(7)
    e = 0.1 * rng.random(300)
    e[40:46] = 4.0
    e[200:204] = 3.0
    ts = np.arange(300, dtype=np.int64)
    base = find_anomalies(e, ts)
    scaled = find_anomalies(a * e, ts)
    assert base.intervals() == scaled.intervals()


def test_threshold_score_none_cases():
    e = np.array([1.0, 1.0, 1.0, 10.0])
    assert threshold_score(e, 50.0) is None  # nothing above
