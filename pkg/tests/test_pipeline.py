"""Template validation, pipeline execution, and fitted-model persistence."""

import copy
import json

import numpy as np
import pytest

from tsadkit.core import AnomalySpec, SyntheticSpec, generate_synthetic
from tsadkit.errors import (
    CycleError,
    OutOfRange,
    SchemaError,
    ShapeMismatch,
    SignalTooShort,
    StepError,
    UnknownHyperparam,
    UnknownPrimitive,
    UnsatisfiedSlot,
)
from tsadkit.metrics import overlapping_segment
from tsadkit.pipeline import (
    FittedPipeline,
    bundled_template,
    detect,
    fit,
    hyperparameter_space,
    instantiate,
    load_fitted,
    load_template,
    save_fitted,
)

BUNDLED = ["ar_dynamic_threshold", "mlp_dynamic_threshold",
           "dense_ae_reconstruction", "window_classifier_supervised"]


def _ar_def():
    return copy.deepcopy(bundled_template("ar_dynamic_threshold").raw_def)


class TestTemplateLoading:
    def test_all_bundled_load(self):
        for name in BUNDLED:
            template = bundled_template(name)
            assert template.name == name

    def test_ar_template_has_six_steps(self):
        assert len(bundled_template("ar_dynamic_threshold").steps) == 6

    def test_self_edge_cycle(self):
        raw = _ar_def()
        raw["edges"].append({"from": "impute_mean", "to": "impute_mean", "slot": "values"})
        with pytest.raises(CycleError):
            load_template(json.dumps(raw))

    def test_two_step_cycle(self):
        raw = _ar_def()
        raw["edges"].append({"from": "scale_minmax", "to": "impute_mean", "slot": "values"})
        with pytest.raises(CycleError):
            load_template(json.dumps(raw))

    def test_unknown_primitive(self):
        raw = _ar_def()
        raw["steps"][4]["primitive"] = "lstm"
        with pytest.raises(UnknownPrimitive):
            load_template(json.dumps(raw))

    def test_unknown_key_rejected(self):
        raw = _ar_def()
        raw["extra"] = 1
        with pytest.raises(SchemaError):
            load_template(json.dumps(raw))

    def test_unknown_step_key_rejected(self):
        raw = _ar_def()
        raw["steps"][0]["typo"] = True
        with pytest.raises(SchemaError):
            load_template(json.dumps(raw))

    def test_unsatisfied_slot(self):
        raw = _ar_def()
        # drop the step that produces the windows slot entirely
        raw["steps"] = [s for s in raw["steps"] if s["id"] != "make_windows"]
        raw["edges"] = [e for e in raw["edges"]
                        if e["from"] != "make_windows" and e["to"] != "make_windows"]
        with pytest.raises(UnsatisfiedSlot):
            load_template(json.dumps(raw))

    def test_error_names_offending_step(self):
        raw = _ar_def()
        raw["steps"][4]["primitive"] = "lstm"
        with pytest.raises(UnknownPrimitive, match="ar_forecaster"):
            load_template(json.dumps(raw))


class TestInstantiate:
    def test_empty_lambda_all_defaults(self):
        template = bundled_template("ar_dynamic_threshold")
        pipeline = instantiate(template, {})
        assert pipeline.params_for("make_windows")["window_size"] == 50
        assert pipeline.params_for("find_anomalies")["prune_p"] == 0.13

    def test_partial_lambda(self):
        template = bundled_template("ar_dynamic_threshold")
        pipeline = instantiate(template, {"find_anomalies.prune_p": 0.2})
        assert pipeline.params_for("find_anomalies")["prune_p"] == 0.2
        assert pipeline.params_for("make_windows")["window_size"] == 50

    def test_out_of_range(self):
        template = bundled_template("ar_dynamic_threshold")
        with pytest.raises(OutOfRange):
            instantiate(template, {"make_windows.window_size": 0})

    def test_unknown_hyperparam(self):
        template = bundled_template("ar_dynamic_threshold")
        with pytest.raises(UnknownHyperparam):
            instantiate(template, {"nonexistent.param": 1})


class TestFitDetect:
    def test_fit_records_six_durations(self, sine_signal):
        signal, _ = sine_signal
        fitted = fit(instantiate(bundled_template("ar_dynamic_threshold"), {}), signal)
        assert len(fitted.fit_durations) == 6
        assert all(d >= 0 for d in fitted.fit_durations.values())

    def test_fit_deterministic(self, sine_signal):
        signal, _ = sine_signal
        pipeline = instantiate(bundled_template("mlp_dynamic_threshold"),
                               {"make_windows.window_size": 20})
        a = fit(pipeline, signal)
        b = fit(pipeline, signal)
        ma, mb = a.states["mlp_forecaster"], b.states["mlp_forecaster"]
        assert np.array_equal(ma.w1, mb.w1) and np.array_equal(ma.w2, mb.w2)

    def test_short_signal_tagged_at_make_windows(self):
        signal, _ = generate_synthetic(SyntheticSpec(
            n=100, seed=0, anomalies=AnomalySpec(count=0)))
        pipeline = instantiate(bundled_template("ar_dynamic_threshold"),
                               {"make_windows.window_size": 150})
        with pytest.raises(StepError) as err:
            fit(pipeline, signal)
        assert err.value.step_id == "make_windows"
        assert isinstance(err.value.cause, SignalTooShort)

    def test_detect_recall_on_injected_spikes(self):
        signal, truth = generate_synthetic(SyntheticSpec(
            n=3000, seed=0, noise_sd=0.05,
            anomalies=AnomalySpec(count=3, kind="spike", min_len=15, max_len=30,
                                  amp_sd=25.0)))
        pipeline = instantiate(bundled_template("ar_dynamic_threshold"),
                               {"make_windows.window_size": 20,
                                "find_anomalies.prune_p": 0.4})
        fitted = fit(pipeline, signal)
        events = detect(fitted, signal)
        c = overlapping_segment(truth, events)
        assert c.tp / (c.tp + c.fn) >= 2 / 3

    def test_detect_on_clean_signal_sparse(self, clean_signal):
        pipeline = instantiate(bundled_template("ar_dynamic_threshold"), {})
        fitted = fit(pipeline, clean_signal)
        assert len(detect(fitted, clean_signal)) <= 1

    def test_detect_deterministic(self, sine_signal):
        signal, _ = sine_signal
        fitted = fit(instantiate(bundled_template("ar_dynamic_threshold"), {}), signal)
        assert list(detect(fitted, signal)) == list(detect(fitted, signal))

    def test_detect_channel_mismatch(self, sine_signal):
        signal, _ = sine_signal
        fitted = fit(instantiate(bundled_template("ar_dynamic_threshold"), {}), signal)
        two_chan, _ = generate_synthetic(SyntheticSpec(n=300, m=2, seed=0,
                                                       anomalies=AnomalySpec(count=0)))
        with pytest.raises(ShapeMismatch):
            detect(fitted, two_chan)

    def test_events_within_signal_span(self, sine_signal):
        signal, _ = sine_signal
        for name in ("ar_dynamic_threshold", "dense_ae_reconstruction"):
            fitted = fit(instantiate(bundled_template(name), {}), signal)
            for e in detect(fitted, signal):
                assert signal.timestamps[0] <= e.t_s < e.t_e <= signal.timestamps[-1]

    def test_swapping_preprocessing_primitive_via_json_only(self, sine_signal):
        # editing only the template JSON swaps one preprocessing step
        signal, _ = sine_signal
        raw = _ar_def()
        assert raw["steps"][1]["primitive"] == "impute_mean"
        raw["steps"][1]["primitive"] = "scale_minmax"
        raw["steps"][1]["id"] = "prescale"
        for e in raw["edges"]:
            for k in ("from", "to"):
                if e[k] == "impute_mean":
                    e[k] = "prescale"
        swapped = load_template(json.dumps(raw))
        fitted = fit(instantiate(swapped, {}), signal)
        assert isinstance(detect(fitted, signal), type(detect(
            fit(instantiate(bundled_template("ar_dynamic_threshold"), {}), signal), signal)))


class TestHyperparamSpace:
    def test_full_includes_postprocessing(self):
        template = bundled_template("ar_dynamic_threshold")
        keys = [k for k, _ in hyperparameter_space(template, "full")]
        assert "find_anomalies.prune_p" in keys

    def test_unsupervised_excludes_postprocessing(self):
        template = bundled_template("ar_dynamic_threshold")
        keys = [k for k, _ in hyperparameter_space(template, "unsupervised_subpipeline")]
        assert all(not k.startswith("find_anomalies.") for k in keys)
        assert "make_windows.window_size" in keys

    def test_ordering_stable(self):
        template = bundled_template("mlp_dynamic_threshold")
        a = hyperparameter_space(template, "full")
        b = hyperparameter_space(template, "full")
        assert [k for k, _ in a] == [k for k, _ in b]


class TestPersistence:
    def test_save_load_round_trip(self, sine_signal, tmp_path):
        signal, _ = sine_signal
        fitted = fit(instantiate(bundled_template("ar_dynamic_threshold"), {}), signal)
        path = tmp_path / "model.bin"
        save_fitted(fitted, path)
        back = load_fitted(path)
        assert isinstance(back, FittedPipeline)
        assert list(detect(back, signal)) == list(detect(fitted, signal))

    def test_corrupted_file_rejected(self, sine_signal, tmp_path):
        signal, _ = sine_signal
        fitted = fit(instantiate(bundled_template("ar_dynamic_threshold"), {}), signal)
        path = tmp_path / "model.bin"
        save_fitted(fitted, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(Exception):
            load_fitted(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(Exception):
            load_fitted(path)
