"""Primitive registry: metadata, hyperparameter specs, and the step adapters
that thread a DataContext through fit/detect execution.

Slots a primitive may read or write: timestamps, values, windows, targets,
target_timestamps, predictions, errors, events, scaler_params, model,
truth_events.  `timestamps`, `values` (and optionally `truth_events`) are the
raw inputs available before any step runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Event, EventList, Signal
from ..errors import BadHyperparamSpec, OutOfRange, SingleClassData
from . import modeling, postprocessing, preprocessing

RAW_SLOTS = frozenset({"timestamps", "values", "truth_events"})
ENGINES = ("preprocessing", "modeling", "postprocessing")


@dataclass(frozen=True)
class HyperparamSpec:
    kind: str  # int_range | float_range | categorical | boolean
    lo: float | None = None
    hi: float | None = None
    choices: tuple | None = None
    default: object = None

    def __post_init__(self):
        if self.kind in ("int_range", "float_range"):
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise BadHyperparamSpec(f"{self.kind} requires lo < hi, got ({self.lo}, {self.hi})")
        elif self.kind == "categorical":
            if not self.choices:
                raise BadHyperparamSpec("categorical requires choices")
        elif self.kind != "boolean":
            raise BadHyperparamSpec(f"unknown spec kind {self.kind!r}")
        if self.default is None or not self.contains(self.default):
            raise BadHyperparamSpec(f"default {self.default!r} outside spec {self}")

    def contains(self, value) -> bool:
        if self.kind == "int_range":
            return isinstance(value, (int, np.integer)) and not isinstance(value, bool) \
                and self.lo <= value <= self.hi
        if self.kind == "float_range":
            return isinstance(value, (int, float, np.floating, np.integer)) \
                and not isinstance(value, bool) and self.lo <= value <= self.hi
        if self.kind == "categorical":
            return value in self.choices
        return isinstance(value, (bool, np.bool_))

    def to_dict(self):
        d = {"kind": self.kind, "default": self.default}
        if self.kind in ("int_range", "float_range"):
            d["lo"], d["hi"] = self.lo, self.hi
        if self.kind == "categorical":
            d["choices"] = list(self.choices)
        return d

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"kind", "lo", "hi", "choices", "default"}
        if extra:
            raise BadHyperparamSpec(f"unknown spec keys {sorted(extra)}")
        return cls(kind=d.get("kind"), lo=d.get("lo"), hi=d.get("hi"),
                   choices=tuple(d["choices"]) if d.get("choices") else None,
                   default=d.get("default"))


@dataclass(frozen=True)
class PrimitiveMeta:
    name: str
    engine: str
    description: str
    reads: tuple[str, ...]
    writes: tuple[str, ...]
    hyperparameters: dict[str, HyperparamSpec] = field(default_factory=dict)
    doc_url: str | None = None

    def to_dict(self):
        return {"name": self.name, "engine": self.engine, "description": self.description,
                "reads": list(self.reads), "writes": list(self.writes),
                "doc_url": self.doc_url,
                "hyperparameters": {k: v.to_dict() for k, v in self.hyperparameters.items()}}


class Primitive:
    """A registered step: fit(ctx, params) -> state, transform(ctx, params, state)."""

    def __init__(self, meta: PrimitiveMeta, fit_fn, transform_fn):
        self.meta = meta
        self._fit = fit_fn
        self._transform = transform_fn

    def fit(self, ctx: dict, params: dict):
        return self._fit(ctx, params)

    def transform(self, ctx: dict, params: dict, state):
        self._transform(ctx, params, state)


REGISTRY: dict[str, Primitive] = {}


def register(meta: PrimitiveMeta, fit_fn, transform_fn):
    if meta.name in REGISTRY:
        raise ValueError(f"duplicate primitive {meta.name}")
    if meta.engine not in ENGINES:
        raise ValueError(f"bad engine {meta.engine}")
    REGISTRY[meta.name] = Primitive(meta, fit_fn, transform_fn)


def get_primitive(name: str) -> Primitive:
    return REGISTRY[name]


def catalog() -> list[dict]:
    """JSON-serializable primitive catalog, for validation and the UI."""
    return [p.meta.to_dict() for p in sorted(REGISTRY.values(), key=lambda p: p.meta.name)]


def _stateless(transform_fn):
    def fit(ctx, params):
        transform_fn(ctx, params, None)
        return None
    return fit


# --- preprocessing ---

def _tsa_transform(ctx, params, state):
    sig = Signal(name="ctx", timestamps=ctx["timestamps"], values=ctx["values"])
    out = preprocessing.time_segments_aggregate(sig, int(params["interval"]), params["method"])
    ctx["timestamps"], ctx["values"] = out.timestamps, out.values


register(
    PrimitiveMeta(
        name="time_segments_aggregate", engine="preprocessing",
        description="Resample onto a regular grid by aggregating fixed buckets",
        reads=("timestamps", "values"), writes=("timestamps", "values"),
        hyperparameters={
            "interval": HyperparamSpec("int_range", lo=1, hi=86400, default=1),
            "method": HyperparamSpec("categorical", choices=("mean", "median"), default="mean"),
        }),
    _stateless(_tsa_transform), _tsa_transform)


def _impute_transform(ctx, params, state):
    ctx["values"] = preprocessing.impute_mean(ctx["values"])


register(
    PrimitiveMeta(
        name="impute_mean", engine="preprocessing",
        description="Replace NaNs with the per-channel mean",
        reads=("values",), writes=("values",)),
    _stateless(_impute_transform), _impute_transform)


def _scale_fit(ctx, params):
    scaled, sp = preprocessing.scale_minmax(ctx["values"], params["lo"], params["hi"])
    ctx["values"], ctx["scaler_params"] = scaled, sp
    return sp


def _scale_transform(ctx, params, state):
    # reuse fit-time min/max so detect sees the same coordinate system
    ctx["values"] = preprocessing.apply_scale(ctx["values"], state)
    ctx["scaler_params"] = state


register(
    PrimitiveMeta(
        name="scale_minmax", engine="preprocessing",
        description="Per-channel min-max scaling to a fixed range",
        reads=("values",), writes=("values", "scaler_params"),
        hyperparameters={
            "lo": HyperparamSpec("float_range", lo=-10.0, hi=0.0, default=-1.0),
            "hi": HyperparamSpec("float_range", lo=1e-9, hi=10.0, default=1.0),
        }),
    _scale_fit, _scale_transform)


def _windows_transform(ctx, params, state):
    w, t, tt = preprocessing.make_windows(
        ctx["values"], ctx["timestamps"],
        int(params["window_size"]), int(params["step"]), int(params["horizon"]))
    ctx["windows"], ctx["targets"], ctx["target_timestamps"] = w, t, tt


register(
    PrimitiveMeta(
        name="make_windows", engine="preprocessing",
        description="Sliding windows with forecasting or reconstruction targets",
        reads=("timestamps", "values"),
        writes=("windows", "targets", "target_timestamps"),
        hyperparameters={
            "window_size": HyperparamSpec("int_range", lo=1, hi=500, default=50),
            "step": HyperparamSpec("int_range", lo=1, hi=100, default=1),
            "horizon": HyperparamSpec("int_range", lo=0, hi=50, default=1),
        }),
    _stateless(_windows_transform), _windows_transform)


# --- modeling ---

def _ar_fit(ctx, params):
    model = modeling.fit_ar(ctx["windows"], ctx["targets"])
    ctx["model"] = model
    ctx["predictions"] = modeling.ar_predict(model, ctx["windows"])
    return model


def _ar_transform(ctx, params, state):
    ctx["model"] = state
    ctx["predictions"] = modeling.ar_predict(state, ctx["windows"])


register(
    PrimitiveMeta(
        name="ar_forecaster", engine="modeling",
        description="Per-channel autoregressive least-squares forecaster",
        reads=("windows", "targets"), writes=("predictions", "model")),
    _ar_fit, _ar_transform)


def _mlp_fit(ctx, params):
    model = modeling.fit_mlp(ctx["windows"], ctx["targets"],
                             hidden=int(params["hidden"]), lr=params["lr"],
                             epochs=int(params["epochs"]), seed=int(params["seed"]))
    ctx["model"] = model
    ctx["predictions"] = modeling.mlp_predict(model, ctx["windows"])
    return model


def _mlp_transform(ctx, params, state):
    ctx["model"] = state
    ctx["predictions"] = modeling.mlp_predict(state, ctx["windows"])


register(
    PrimitiveMeta(
        name="mlp_forecaster", engine="modeling",
        description="One-hidden-layer tanh MLP forecaster",
        reads=("windows", "targets"), writes=("predictions", "model"),
        hyperparameters={
            "hidden": HyperparamSpec("int_range", lo=4, hi=128, default=32),
            "lr": HyperparamSpec("float_range", lo=1e-4, hi=1.0, default=0.01),
            "epochs": HyperparamSpec("int_range", lo=10, hi=2000, default=200),
            "seed": HyperparamSpec("int_range", lo=0, hi=2**31 - 1, default=0),
        }),
    _mlp_fit, _mlp_transform)


def _ae_fit(ctx, params):
    model = modeling.fit_dense_ae(ctx["windows"], latent_dim=int(params["latent_dim"]),
                                  lr=params["lr"], epochs=int(params["epochs"]),
                                  seed=int(params["seed"]))
    ctx["model"] = model
    ctx["predictions"] = modeling.ae_reconstruct(model, ctx["windows"])
    return model


def _ae_transform(ctx, params, state):
    ctx["model"] = state
    ctx["predictions"] = modeling.ae_reconstruct(state, ctx["windows"])


register(
    PrimitiveMeta(
        name="dense_autoencoder", engine="modeling",
        description="Dense autoencoder reconstructing whole windows",
        reads=("windows",), writes=("predictions", "model"),
        hyperparameters={
            "latent_dim": HyperparamSpec("int_range", lo=1, hi=64, default=5),
            "lr": HyperparamSpec("float_range", lo=1e-4, hi=1.0, default=0.05),
            "epochs": HyperparamSpec("int_range", lo=10, hi=5000, default=500),
            "seed": HyperparamSpec("int_range", lo=0, hi=2**31 - 1, default=0),
        }),
    _ae_fit, _ae_transform)


def _classifier_labels(ctx):
    truth = ctx.get("truth_events")
    if truth is None or len(truth) == 0:
        raise SingleClassData("window_classifier requires ground-truth events at fit time")
    ts = ctx["timestamps"]
    windows = ctx["windows"]
    target_ts = ctx["target_timestamps"]
    w = windows.shape[1]
    dt = int(np.median(np.diff(ts))) if len(ts) > 1 else 1
    labels = []
    for end_t in target_ts:
        start_t = int(end_t) - (w - 1) * dt
        hit = any(ev.t_s <= int(end_t) and start_t <= ev.t_e for ev in truth)
        labels.append(1.0 if hit else 0.0)
    return np.array(labels)


def _classifier_fit(ctx, params):
    labels = _classifier_labels(ctx)
    model = modeling.fit_logistic_windows(ctx["windows"], labels, lr=params["lr"],
                                          epochs=int(params["epochs"]), seed=int(params["seed"]))
    ctx["model"] = model
    _classifier_transform(ctx, params, model)
    return model


def _classifier_transform(ctx, params, state):
    ctx["model"] = state
    proba = modeling.logistic_predict_proba(state, ctx["windows"])
    ctx["predictions"] = proba.reshape(-1, 1)
    ctx["events"] = windows_to_events(proba, ctx["target_timestamps"],
                                      threshold=params["threshold"],
                                      merge_gap=int(params["merge_gap"]))


def windows_to_events(proba: np.ndarray, target_timestamps, threshold: float = 0.5,
                      merge_gap: int = 1) -> EventList:
    """Mark windows with probability above threshold and merge consecutive
    marked windows (gaps up to merge_gap windows) into events."""
    ts = np.asarray(target_timestamps, dtype=np.int64)
    marked = proba > threshold
    dt = int(np.median(np.diff(ts))) if len(ts) > 1 else 1
    dt = max(dt, 1)
    groups = []
    for i, flag in enumerate(marked):
        if not flag:
            continue
        if groups and i - groups[-1][-1] <= merge_gap + 1:
            groups[-1].append(i)
        else:
            groups.append([i])
    events = []
    for g in groups:
        t_s, t_e = int(ts[g[0]]), int(ts[g[-1]])
        if t_e <= t_s:
            t_e = t_s + dt
        sev = float(np.mean(proba[g]))
        events.append(Event(t_s=t_s, t_e=t_e, severity=sev))
    return EventList(tuple(events))


register(
    PrimitiveMeta(
        name="window_classifier", engine="modeling",
        description="Logistic window classifier trained on labeled events",
        reads=("windows", "timestamps", "target_timestamps", "truth_events"),
        writes=("predictions", "events", "model"),
        hyperparameters={
            "lr": HyperparamSpec("float_range", lo=1e-3, hi=5.0, default=0.5),
            "epochs": HyperparamSpec("int_range", lo=10, hi=5000, default=500),
            "seed": HyperparamSpec("int_range", lo=0, hi=2**31 - 1, default=0),
            "threshold": HyperparamSpec("float_range", lo=0.05, hi=0.95, default=0.5),
            "merge_gap": HyperparamSpec("int_range", lo=0, hi=50, default=1),
        }),
    _classifier_fit, _classifier_transform)


# --- postprocessing ---

def _errors_transform(ctx, params, state):
    ctx["errors"] = postprocessing.regression_errors(
        ctx["targets"], ctx["predictions"],
        smooth=bool(params["smooth"]), ewma_alpha=params["ewma_alpha"])


register(
    PrimitiveMeta(
        name="regression_errors", engine="postprocessing",
        description="Channel-averaged absolute residuals, optionally EWMA-smoothed",
        reads=("targets", "predictions"), writes=("errors",),
        hyperparameters={
            "smooth": HyperparamSpec("boolean", default=True),
            "ewma_alpha": HyperparamSpec("float_range", lo=0.01, hi=1.0, default=0.1),
        }),
    _stateless(_errors_transform), _errors_transform)


def _find_transform(ctx, params, state):
    ctx["events"] = postprocessing.find_anomalies(
        ctx["errors"], ctx["target_timestamps"],
        z_min=params["z_min"], z_max=params["z_max"], z_step=params["z_step"],
        prune_p=params["prune_p"], min_gap_samples=int(params["min_gap_samples"]))


register(
    PrimitiveMeta(
        name="find_anomalies", engine="postprocessing",
        description="Dynamic-threshold extraction of anomalous intervals",
        reads=("errors", "target_timestamps"), writes=("events",),
        hyperparameters={
            "z_min": HyperparamSpec("float_range", lo=0.5, hi=6.0, default=2.0),
            "z_max": HyperparamSpec("float_range", lo=2.0, hi=20.0, default=10.0),
            "z_step": HyperparamSpec("float_range", lo=0.1, hi=2.0, default=0.5),
            "prune_p": HyperparamSpec("float_range", lo=0.0001, hi=0.9, default=0.13),
            "min_gap_samples": HyperparamSpec("int_range", lo=1, hi=100, default=1),
        }),
    _stateless(_find_transform), _find_transform)


# Composite post step: errors then threshold extraction as one catalog entry,
# so bundled templates keep the six-step shape while both halves stay
# independently invokable.

def _err_thresh_transform(ctx, params, state):
    _errors_transform(ctx, params, state)
    _find_transform(ctx, params, state)


register(
    PrimitiveMeta(
        name="error_threshold", engine="postprocessing",
        description="Residual errors followed by dynamic-threshold event extraction",
        reads=("targets", "predictions", "target_timestamps"),
        writes=("errors", "events"),
        hyperparameters={
            "smooth": HyperparamSpec("boolean", default=True),
            "ewma_alpha": HyperparamSpec("float_range", lo=0.01, hi=1.0, default=0.1),
            "z_min": HyperparamSpec("float_range", lo=0.5, hi=6.0, default=2.0),
            "z_max": HyperparamSpec("float_range", lo=2.0, hi=20.0, default=10.0),
            "z_step": HyperparamSpec("float_range", lo=0.1, hi=2.0, default=0.5),
            "prune_p": HyperparamSpec("float_range", lo=0.0001, hi=0.9, default=0.13),
            "min_gap_samples": HyperparamSpec("int_range", lo=1, hi=100, default=1),
        }),
    _stateless(_err_thresh_transform), _err_thresh_transform)
