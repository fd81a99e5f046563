"""Templates, pipelines, DAG validation, and the fit/detect executor."""

from __future__ import annotations

import json
import struct
import time
import zlib
from dataclasses import dataclass, field
from importlib import resources
from types import MappingProxyType

import numpy as np

from .core import Event, EventList, Signal
from .errors import (
    CycleError,
    OutOfRange,
    SchemaError,
    StepError,
    TsadError,
    UnknownHyperparam,
    UnknownPrimitive,
    UnsatisfiedSlot,
)
from .primitives import RAW_SLOTS, REGISTRY, HyperparamSpec, get_primitive

BUNDLED_TEMPLATES = (
    "ar_dynamic_threshold",
    "mlp_dynamic_threshold",
    "dense_ae_reconstruction",
    "window_classifier_supervised",
)


@dataclass(frozen=True)
class Step:
    id: str
    primitive: str
    config: dict


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    slot: str


@dataclass(frozen=True)
class Template:
    """A validated DAG of primitive steps plus its joint tunable space."""

    name: str
    steps: tuple[Step, ...]
    edges: tuple[Edge, ...]
    space: dict[str, HyperparamSpec]  # "step_id.param" -> spec, in execution order
    exec_order: tuple[str, ...]
    raw_def: dict = field(repr=False, default_factory=dict)

    def step(self, step_id: str) -> Step:
        for s in self.steps:
            if s.id == step_id:
                return s
        raise KeyError(step_id)

    def to_json(self) -> str:
        return json.dumps(self.raw_def, indent=2)


def _toposort(steps: list[Step], edges: list[Edge]) -> list[str]:
    order_index = {s.id: i for i, s in enumerate(steps)}
    deps: dict[str, set] = {s.id: set() for s in steps}
    for e in edges:
        deps[e.dst].add(e.src)
    done: list[str] = []
    ready = sorted([s for s in deps if not deps[s]], key=order_index.get)
    while ready:
        node = ready.pop(0)
        done.append(node)
        for other in deps:
            deps[other].discard(node)
        ready = sorted([s for s in deps if not deps[s] and s not in done],
                       key=order_index.get)
    if len(done) != len(steps):
        remaining = sorted(set(deps) - set(done))
        raise CycleError(f"cycle involving steps {remaining}")
    return done


def load_template(json_text: str) -> Template:
    """Parse and fully validate a template definition; error messages name the
    offending step. Unknown keys are rejected, not ignored."""
    try:
        raw = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("template must be a JSON object")
    extra = set(raw) - {"name", "steps", "edges", "hyperparameters"}
    if extra:
        raise SchemaError(f"unknown template keys {sorted(extra)}")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("template requires a nonempty 'name'")
    if not isinstance(raw.get("steps"), list) or not raw["steps"]:
        raise SchemaError(f"template '{name}': 'steps' must be a nonempty list")

    steps: list[Step] = []
    for sd in raw["steps"]:
        if not isinstance(sd, dict):
            raise SchemaError(f"template '{name}': step entries must be objects")
        extra = set(sd) - {"id", "primitive", "config"}
        if extra:
            raise SchemaError(f"step {sd.get('id')!r}: unknown keys {sorted(extra)}")
        sid, prim_name = sd.get("id"), sd.get("primitive")
        if not isinstance(sid, str) or not isinstance(prim_name, str):
            raise SchemaError(f"step {sd!r}: 'id' and 'primitive' must be strings")
        if any(s.id == sid for s in steps):
            raise SchemaError(f"duplicate step id {sid!r}")
        if prim_name not in REGISTRY:
            raise UnknownPrimitive(f"step {sid!r}: unknown primitive {prim_name!r}")
        config = sd.get("config", {})
        if not isinstance(config, dict):
            raise SchemaError(f"step {sid!r}: config must be an object")
        prim = get_primitive(prim_name)
        for key, value in config.items():
            if key not in prim.meta.hyperparameters:
                raise SchemaError(f"step {sid!r}: unknown config key {key!r}")
            if not prim.meta.hyperparameters[key].contains(value):
                raise SchemaError(f"step {sid!r}: config {key}={value!r} outside spec")
        steps.append(Step(id=sid, primitive=prim_name, config=dict(config)))

    edges: list[Edge] = []
    for ed in raw.get("edges", []):
        if not isinstance(ed, dict):
            raise SchemaError(f"template '{name}': edge entries must be objects")
        extra = set(ed) - {"from", "to", "slot"}
        if extra:
            raise SchemaError(f"edge {ed!r}: unknown keys {sorted(extra)}")
        src, dst, slot = ed.get("from"), ed.get("to"), ed.get("slot")
        ids = {s.id for s in steps}
        if src not in ids or dst not in ids:
            raise SchemaError(f"edge {src!r}->{dst!r}: unknown step")
        if src == dst:
            raise CycleError(f"step {src!r} has an edge to itself")
        src_prim = get_primitive(next(s.primitive for s in steps if s.id == src))
        dst_prim = get_primitive(next(s.primitive for s in steps if s.id == dst))
        if slot not in src_prim.meta.writes:
            raise SchemaError(f"edge {src!r}->{dst!r}: {src!r} does not write slot {slot!r}")
        if slot not in dst_prim.meta.reads:
            raise SchemaError(f"edge {src!r}->{dst!r}: {dst!r} does not read slot {slot!r}")
        edges.append(Edge(src=src, dst=dst, slot=slot))

    exec_order = _toposort(steps, edges)

    # every read slot must be satisfied by an upstream writer or the raw signal
    produced = set(RAW_SLOTS)
    for sid in exec_order:
        step = next(s for s in steps if s.id == sid)
        prim = get_primitive(step.primitive)
        missing = set(prim.meta.reads) - produced
        if missing:
            raise UnsatisfiedSlot(f"step {sid!r} reads unproduced slots {sorted(missing)}")
        produced |= set(prim.meta.writes)

    hp_raw = raw.get("hyperparameters", {})
    if not isinstance(hp_raw, dict):
        raise SchemaError(f"template '{name}': 'hyperparameters' must be an object")
    space: dict[str, HyperparamSpec] = {}
    step_map = {s.id: s for s in steps}
    for key, spec_dict in hp_raw.items():
        if "." not in key:
            raise SchemaError(f"hyperparameter key {key!r} must be '<step_id>.<param>'")
        sid, param = key.split(".", 1)
        if sid not in step_map:
            raise SchemaError(f"hyperparameter {key!r}: unknown step {sid!r}")
        prim = get_primitive(step_map[sid].primitive)
        if param not in prim.meta.hyperparameters:
            raise SchemaError(f"hyperparameter {key!r}: primitive "
                              f"{step_map[sid].primitive!r} has no param {param!r}")
        if param in step_map[sid].config:
            raise SchemaError(f"hyperparameter {key!r} conflicts with static config")
        space[key] = HyperparamSpec.from_dict(spec_dict)

    # deterministic ordering: topological, then param name
    ordered = {}
    for sid in exec_order:
        for key in sorted(k for k in space if k.split(".", 1)[0] == sid):
            ordered[key] = space[key]
    return Template(name=name, steps=tuple(steps), edges=tuple(edges),
                    space=ordered, exec_order=tuple(exec_order), raw_def=raw)


def load_template_file(path) -> Template:
    with open(path, "r", encoding="utf-8") as fh:
        return load_template(fh.read())


def bundled_template(name: str) -> Template:
    """Load one of the templates shipped with the package."""
    text = resources.files("tsadkit.templates").joinpath(f"{name}.json").read_text("utf-8")
    return load_template(text)


@dataclass(frozen=True)
class Pipeline:
    """A template with a fixed hyperparameter assignment."""

    template: Template
    lam: MappingProxyType  # "step_id.param" -> value

    def params_for(self, step_id: str) -> dict:
        step = self.template.step(step_id)
        prim = get_primitive(step.primitive)
        params = {k: spec.default for k, spec in prim.meta.hyperparameters.items()}
        for key, spec in self.template.space.items():
            sid, param = key.split(".", 1)
            if sid == step_id:
                params[param] = spec.default
        params.update(step.config)
        for key, value in self.lam.items():
            sid, param = key.split(".", 1)
            if sid == step_id:
                params[param] = value
        return params

    def lam_dict(self) -> dict:
        return dict(self.lam)


def instantiate(template: Template, lam: dict | None = None) -> Pipeline:
    """Bind a (partial) hyperparameter assignment; the rest take defaults."""
    lam = dict(lam or {})
    for key, value in lam.items():
        if key not in template.space:
            raise UnknownHyperparam(f"{key!r} is not tunable in template '{template.name}'")
        if not template.space[key].contains(value):
            raise OutOfRange(f"{key}={value!r} outside its spec")
    return Pipeline(template=template, lam=MappingProxyType(lam))


def hyperparameter_space(template: Template, scope: str = "full") -> list[tuple[str, HyperparamSpec]]:
    """Ordered tunables. 'unsupervised_subpipeline' drops postprocessing steps
    so tuning can target signal reconstruction quality alone."""
    if scope not in ("full", "unsupervised_subpipeline"):
        raise ValueError(f"unknown scope {scope!r}")
    out = []
    for key, spec in template.space.items():
        sid = key.split(".", 1)[0]
        engine = get_primitive(template.step(sid).primitive).meta.engine
        if scope == "unsupervised_subpipeline" and engine == "postprocessing":
            continue
        out.append((key, spec))
    return out


@dataclass(frozen=True)
class FittedPipeline:
    pipeline: Pipeline
    states: dict
    fit_durations: dict[str, float]
    train_span: tuple[int, int]
    channels: int


def _execute(pipeline: Pipeline, signal: Signal, mode: str, states: dict | None,
             truth: EventList | None, engines: set | None = None):
    ctx = {"timestamps": signal.timestamps, "values": signal.values,
           "truth_events": truth}
    durations: dict[str, float] = {}
    out_states: dict = {}
    for sid in pipeline.template.exec_order:
        step = pipeline.template.step(sid)
        prim = get_primitive(step.primitive)
        if engines is not None and prim.meta.engine not in engines:
            continue
        params = pipeline.params_for(sid)
        start = time.perf_counter()
        try:
            if mode == "fit":
                out_states[sid] = prim.fit(ctx, params)
            else:
                prim.transform(ctx, params, states[sid])
        except StepError:
            raise
        except Exception as exc:
            raise StepError(sid, exc) from exc
        durations[sid] = time.perf_counter() - start
    return ctx, out_states, durations


def _clamp_events(events: EventList, signal: Signal) -> EventList:
    t_last = int(signal.timestamps[-1])
    out = []
    for e in events:
        t_e = min(e.t_e, t_last)
        if t_e <= e.t_s:
            continue  # degenerate sliver at the very end of the span
        out.append(Event(t_s=e.t_s, t_e=t_e, severity=e.severity, source=e.source))
    return EventList(tuple(out))


def fit(pipeline: Pipeline, signal: Signal, truth: EventList | None = None) -> FittedPipeline:
    """Run every step in topological order in fit mode (a full fit plus an
    internal detect pass, so step timings cover all three engines)."""
    _, states, durations = _execute(pipeline, signal, "fit", None, truth)
    return FittedPipeline(pipeline=pipeline, states=states, fit_durations=durations,
                          train_span=(int(signal.timestamps[0]), int(signal.timestamps[-1])),
                          channels=signal.m)


def detect(fitted: FittedPipeline, signal: Signal) -> EventList:
    events, _, _ = detect_with_details(fitted, signal)
    return events


def detect_with_details(fitted: FittedPipeline, signal: Signal):
    """Detect, also returning per-step wall-clock durations and the final context."""
    from .errors import ShapeMismatch
    if signal.m != fitted.channels:
        raise ShapeMismatch(f"signal has {signal.m} channels, pipeline fitted on {fitted.channels}")
    ctx, _, durations = _execute(fitted.pipeline, signal, "detect", fitted.states, None)
    events = ctx.get("events")
    if events is None:
        raise UnsatisfiedSlot("pipeline produced no 'events' slot")
    return _clamp_events(events, signal), durations, ctx


def fit_context(pipeline: Pipeline, signal: Signal, truth: EventList | None = None,
                engines: set | None = None):
    """Fit and return the full DataContext (used by unsupervised objectives,
    which need predictions and targets from the modeling sub-pipeline)."""
    ctx, states, durations = _execute(pipeline, signal, "fit", None, truth, engines=engines)
    return ctx, states, durations


# --- fitted-pipeline persistence: versioned length-prefixed sections with CRC ---

MAGIC = b"TKFP"
FORMAT_VERSION = 1


def _encode_state(state) -> dict | None:
    if state is None:
        return None
    if isinstance(state, dict) and "min" in state:
        return {"scaler": {"min": np.asarray(state["min"]).tolist(),
                           "max": np.asarray(state["max"]).tolist(),
                           "lo": state["lo"], "hi": state["hi"]}}
    if hasattr(state, "to_dict"):
        return {"model": state.to_dict()}
    raise TsadError(f"unserializable step state {type(state)!r}")


def _decode_state(d):
    from .primitives.modeling import model_from_dict
    if d is None:
        return None
    if "scaler" in d:
        s = d["scaler"]
        return {"min": np.array(s["min"]), "max": np.array(s["max"]),
                "lo": s["lo"], "hi": s["hi"]}
    return model_from_dict(d["model"])


def _pack_section(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))


def save_fitted(fitted: FittedPipeline, path) -> None:
    sections = [
        json.dumps(fitted.pipeline.template.raw_def).encode(),
        json.dumps(fitted.pipeline.lam_dict()).encode(),
        json.dumps({sid: _encode_state(st) for sid, st in fitted.states.items()}).encode(),
        json.dumps({"train_span": list(fitted.train_span), "channels": fitted.channels,
                    "fit_durations": fitted.fit_durations}).encode(),
    ]
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", FORMAT_VERSION))
        for payload in sections:
            fh.write(_pack_section(payload))


def load_fitted(path) -> FittedPipeline:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise SchemaError(f"{path}: not a fitted-pipeline file")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format version {version}")
    off = 6
    sections = []
    for _ in range(4):
        if off + 4 > len(blob):
            raise SchemaError(f"{path}: truncated file")
        (length,) = struct.unpack("<I", blob[off:off + 4])
        payload = blob[off + 4:off + 4 + length]
        if len(payload) != length or off + 8 + length > len(blob):
            raise SchemaError(f"{path}: truncated section")
        (crc,) = struct.unpack("<I", blob[off + 4 + length:off + 8 + length])
        if zlib.crc32(payload) != crc:
            raise SchemaError(f"{path}: section CRC mismatch")
        sections.append(payload)
        off += 8 + length
    template = load_template(sections[0].decode())
    lam = json.loads(sections[1].decode())
    pipeline = instantiate(template, lam)
    states = {sid: _decode_state(d) for sid, d in json.loads(sections[2].decode()).items()}
    meta = json.loads(sections[3].decode())
    return FittedPipeline(pipeline=pipeline, states=states,
                          fit_durations=meta["fit_durations"],
                          train_span=tuple(meta["train_span"]), channels=meta["channels"])
