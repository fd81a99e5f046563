"""Annotation-to-training-set conversion, annotator simulation, feedback loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsadkit.core import AnomalySpec, Event, EventList, Signal, SyntheticSpec, generate_synthetic
from tsadkit.errors import SingleClassData
from tsadkit.feedback import (
    build_training_set,
    classify_detect,
    confirmed_normal_regions,
    retrain_semisupervised,
    run_feedback_loop,
    simulate_annotator,
    start_annotator,
    trajectory_to_jsonl,
)
from tsadkit.pipeline import bundled_template, instantiate


def flat_signal(n=100, t0=0):
    ts = np.arange(t0, t0 + n, dtype=np.int64)
    return Signal(timestamps=ts, values=np.zeros((n, 1)), name="flat")


def ev(a, b, severity=0.0):
    return Event(t_s=a, t_e=b, severity=severity)


class TestBuildTrainingSet:
    def test_windows_inside_confirmed_event(self):
        # event spans samples 20..49 (30 samples); w=10 s=5 gives starts
        # 20,25,30,35,40 fully inside -> 5 anomalous windows
        signal = flat_signal(100)
        labeled = build_training_set(signal, [(ev(20, 49), "confirmed")],
                                     window_size=10, step=5)
        anomalous = [lw for lw in labeled if lw.label == "anomalous"]
        assert len(anomalous) == 5
        assert all(lw.origin_event.t_s == 20 for lw in anomalous)

    def test_normal_event_yields_normal_windows(self):
        signal = flat_signal(100)
        labeled = build_training_set(signal, [(ev(0, 99), "normal")],
                                     window_size=10, step=10)
        assert len(labeled) == 10
        assert all(lw.label == "normal" for lw in labeled)

    def test_investigate_yields_nothing(self):
        signal = flat_signal(100)
        assert build_training_set(signal, [(ev(20, 49), "investigate")],
                                  window_size=10, step=5) == []

    def test_investigate_excludes_overlapping_confirmed_windows(self):
        signal = flat_signal(100)
        labeled = build_training_set(
            signal, [(ev(20, 49), "confirmed"), (ev(40, 60), "investigate")],
            window_size=10, step=5)
        # windows starting at 35 and 40 touch the investigate span
        assert {lw.label for lw in labeled} <= {"anomalous"}
        assert len(labeled) == 3

    def test_straddling_windows_excluded(self):
        signal = flat_signal(100)
        labeled = build_training_set(signal, [(ev(20, 29), "confirmed")],
                                     window_size=10, step=1)
        # only the window exactly covering 20..29 fits inside
        assert len(labeled) == 1

    def test_window_values_match_signal_slice(self):
        rng = np.random.default_rng(0)
        vals = rng.normal(size=(50, 1))
        signal = Signal(timestamps=np.arange(50, dtype=np.int64), values=vals, name="x")
        labeled = build_training_set(signal, [(ev(10, 19), "confirmed")],
                                     window_size=10, step=1)
        assert len(labeled) == 1
        assert np.array_equal(labeled[0].window, vals[10:20])


class TestRetrain:
    def _labeled(self):
        rng = np.random.default_rng(1)
        sig_vals = np.concatenate([rng.normal(0, 0.1, (40, 1)),
                                   rng.normal(4, 0.1, (20, 1)),
                                   rng.normal(0, 0.1, (40, 1))])
        signal = Signal(timestamps=np.arange(100, dtype=np.int64),
                        values=sig_vals, name="x")
        return build_training_set(
            signal, [(ev(40, 59), "confirmed"), (ev(0, 35), "normal")],
            window_size=8, step=2), signal

    def test_learns_separable_labels(self):
        labeled, signal = self._labeled()
        model = retrain_semisupervised(labeled)
        events = classify_detect(model, signal, window_size=8, step=2)
        assert len(events) >= 1
        assert any(e.overlaps(ev(40, 59)) for e in events)

    def test_empty_raises(self):
        with pytest.raises(SingleClassData):
            retrain_semisupervised([])

    def test_single_class_raises(self):
        labeled, _ = self._labeled()
        only_anomalous = [lw for lw in labeled if lw.label == "anomalous"]
        with pytest.raises(SingleClassData):
            retrain_semisupervised(only_anomalous)

    def test_deterministic(self):
        labeled, _ = self._labeled()
        a = retrain_semisupervised(labeled, seed=3)
        b = retrain_semisupervised(labeled, seed=3)
        assert np.array_equal(a.weights, b.weights)


class TestAnnotator:
    def test_queue_order_severity_then_missed(self):
        truth = EventList((ev(10, 20), ev(50, 60)))
        detected = EventList((ev(12, 18, severity=1.0), ev(70, 80, severity=5.0)))
        state = start_annotator(truth, detected)
        verdicts = [(e.t_s, v) for e, v in state.queue]
        # highest severity first, false alarm tagged normal, missed truth appended
        assert verdicts == [(70, "normal"), (12, "confirmed"), (50, "add")]
        assert state.queue[2][0].source == "manual"

    def test_batches_conserve_queue(self):
        truth = EventList(tuple(ev(10 * i, 10 * i + 5) for i in range(1, 8)))
        state = start_annotator(truth, EventList(()))
        seen = []
        while True:
            batch = simulate_annotator(state, 3)
            if not batch:
                break
            seen.extend(batch)
        assert len(seen) == 7
        assert [e.t_s for e, _ in seen] == [e.t_s for e, _ in state.queue]

    def test_k_validation(self):
        state = start_annotator(EventList(()), EventList(()))
        with pytest.raises(ValueError):
            simulate_annotator(state, 0)

    @given(st.integers(min_value=1, max_value=10), st.integers(min_value=0, max_value=12))
    @settings(max_examples=50, deadline=None)
    def test_conservation_property(self, k, n_truth):
        truth = EventList(tuple(ev(10 * i, 10 * i + 4) for i in range(n_truth)))
        state = start_annotator(truth, EventList(()))
        total = 0
        while True:
            batch = simulate_annotator(state, k)
            if not batch:
                break
            assert len(batch) <= k
            total += len(batch)
        assert total == n_truth


class TestNormalRegions:
    def test_flanks_around_confirmed_event(self):
        signal = flat_signal(200)
        truth = EventList((ev(100, 110),))
        regions = confirmed_normal_regions([(ev(100, 110), "confirmed")], truth,
                                           signal, window_size=10)
        # margin = 2*10*1 = 20: flanks [80,99] and [111,130]
        assert [(r.t_s, r.t_e) for r in regions] == [(80, 99), (111, 130)]

    def test_regions_avoid_truth(self):
        signal = flat_signal(200)
        truth = EventList((ev(100, 110), ev(120, 125)))
        regions = confirmed_normal_regions([(ev(100, 110), "confirmed")], truth,
                                           signal, window_size=10)
        for r in regions:
            for t in truth:
                assert not r.overlaps(t)

    def test_normal_tag_expands_whole_span(self):
        signal = flat_signal(200)
        regions = confirmed_normal_regions([(ev(50, 55), "normal")], EventList(()),
                                           signal, window_size=10)
        assert [(r.t_s, r.t_e) for r in regions] == [(30, 75)]

    def test_clipped_to_signal_span(self):
        signal = flat_signal(100)
        regions = confirmed_normal_regions([(ev(5, 10), "normal")], EventList(()),
                                           signal, window_size=10)
        assert regions[0].t_s == 0


def _loop_case(seed):
    train, truth_train = generate_synthetic(SyntheticSpec(
        n=3000, seed=seed, noise_sd=0.5,
        anomalies=AnomalySpec(count=20, kind="spike", min_len=24, max_len=40,
                              amp_sd=4.0)))
    test, truth_test = generate_synthetic(SyntheticSpec(
        n=1500, seed=seed + 1000, noise_sd=0.5,
        anomalies=AnomalySpec(count=8, kind="spike", min_len=24, max_len=40,
                              amp_sd=4.0)))
    return train, truth_train, test, truth_test


class TestLoop:
    def test_trajectory_shape_and_conservation(self):
        train, truth_train, test, truth_test = _loop_case(0)
        pipeline = instantiate(bundled_template("ar_dynamic_threshold"),
                               {"find_anomalies.ewma_alpha": 0.3})
        trajectory = run_feedback_loop(train, truth_train, test, truth_test,
                                       pipeline, k=2, window_size=12)
        assert trajectory[0].iteration == 0 and trajectory[0].n_annotations == 0
        diffs = [b.n_annotations - a.n_annotations
                 for a, b in zip(trajectory, trajectory[1:])]
        assert all(0 < d <= 2 for d in diffs)
        assert len({p.f1_unsup for p in trajectory}) == 1

    def test_large_k_consumes_queue_in_one_batch(self):
        train, truth_train, test, truth_test = _loop_case(1)
        pipeline = instantiate(bundled_template("ar_dynamic_threshold"),
                               {"find_anomalies.ewma_alpha": 0.3})
        trajectory = run_feedback_loop(train, truth_train, test, truth_test,
                                       pipeline, k=10_000, window_size=12)
        assert len(trajectory) == 2

    def test_deterministic(self):
        train, truth_train, test, truth_test = _loop_case(2)
        pipeline = instantiate(bundled_template("ar_dynamic_threshold"),
                               {"find_anomalies.ewma_alpha": 0.3})
        a = run_feedback_loop(train, truth_train, test, truth_test, pipeline,
                              k=4, window_size=12, seed=0)
        b = run_feedback_loop(train, truth_train, test, truth_test, pipeline,
                              k=4, window_size=12, seed=0)
        assert a == b

    def test_jsonl_round_trip(self):
        import json
        train, truth_train, test, truth_test = _loop_case(3)
        pipeline = instantiate(bundled_template("ar_dynamic_threshold"),
                               {"find_anomalies.ewma_alpha": 0.3})
        trajectory = run_feedback_loop(train, truth_train, test, truth_test,
                                       pipeline, k=10_000, window_size=12)
        lines = trajectory_to_jsonl(trajectory).strip().split("\n")
        assert len(lines) == len(trajectory)
        parsed = [json.loads(line) for line in lines]
        assert parsed[0]["iter"] == 0
        assert parsed[-1]["n_annotations"] == trajectory[-1].n_annotations
