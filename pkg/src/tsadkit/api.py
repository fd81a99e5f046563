"""HTTP interface over the knowledge base and detection engine.

REST + JSON, no websockets; clients poll.  Every event-mutating request
commits its EventInteraction record in the same journal batch, so history can
never diverge from state.  Auth is an optional shared bearer token.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .core import Event, EventList, Signal, load_signal_csv
from .errors import (
    DanglingReference,
    MissingField,
    SingleClassData,
    TsadError,
    UnknownCollection,
)
from .feedback import build_training_set, retrain_semisupervised
from .pipeline import detect, fit, instantiate, load_template
from .primitives.modeling import logistic_predict_proba
from .primitives.preprocessing import time_segments_aggregate
from .store import SCHEMA, Store, open_store

MAX_DATA_POINTS = 50_000
RETRAIN_WINDOW_SIZE = 10


@dataclass(frozen=True)
class ApiConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    store_path: str = "kb"
    static_dir: str | None = None
    auth_token: str | None = None


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field


def _error_response(status: int, code: str, message: str, field: str | None = None):
    body = {"error": code, "message": message}
    if field is not None:
        body["field"] = field
    return JSONResponse(status_code=status, content=body)


def _doc_json(doc) -> dict:
    out = {"id": doc.id, "created_at": doc.created_at, "updated_at": doc.updated_at}
    out.update(doc.body)
    return out


async def _body(request: Request) -> dict:
    try:
        data = await request.json()
    except json.JSONDecodeError:
        raise ApiError(400, "bad_json", "request body is not valid JSON")
    if not isinstance(data, dict):
        raise ApiError(400, "bad_json", "request body must be a JSON object")
    return data


def _require(data: dict, field: str, kind=None):
    if field not in data:
        raise ApiError(400, "missing_field", f"field {field!r} is required", field=field)
    value = data[field]
    if kind is int and isinstance(value, bool):
        raise ApiError(400, "bad_type", f"field {field!r} must be an integer", field=field)
    if kind is not None and not isinstance(value, kind):
        raise ApiError(400, "bad_type", f"field {field!r} has the wrong type", field=field)
    return value


def _get_or_404(store: Store, collection: str, doc_id: str):
    doc = store.get(collection, doc_id)
    if doc is None or doc.deleted:
        raise ApiError(404, "not_found", f"{collection}/{doc_id} not found")
    return doc


def _load_signal(doc) -> Signal:
    uri = doc.body["data_uri"]
    if uri.startswith("file://"):
        uri = uri[len("file://"):]
    path = Path(uri)
    if not path.exists():
        raise ApiError(404, "data_unreadable", f"signal data {uri!r} not readable")
    return load_signal_csv(path, name=doc.body["name"])


def create_app(store: Store, static_dir: str | None = None,
               auth_token: str | None = None) -> FastAPI:
    app = FastAPI(title="tsadkit", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.retrain_state = {"model_id": None, "annotations_seen": -1}

    @app.middleware("http")
    async def auth_middleware(request: Request, call_next):
        if auth_token is not None and not request.url.path.startswith("/static"):
            header = request.headers.get("authorization", "")
            if header != f"Bearer {auth_token}":
                return _error_response(401, "unauthorized", "missing or invalid bearer token")
        return await call_next(request)

    @app.exception_handler(ApiError)
    async def handle_api_error(request, exc: ApiError):
        return _error_response(exc.status, exc.code, exc.message, exc.field)

    @app.exception_handler(TsadError)
    async def handle_domain_error(request, exc: TsadError):
        status = 400
        if isinstance(exc, DanglingReference):
            status = 404
        elif isinstance(exc, SingleClassData):
            status = 409
        elif isinstance(exc, UnknownCollection):
            status = 404
        return _error_response(status, type(exc).__name__, str(exc))

    # --- schema / datasets / signals ---

    @app.get("/schema")
    async def get_schema():
        return SCHEMA

    @app.get("/datasets")
    async def list_datasets():
        return [_doc_json(d) for d in store.find("Dataset")]

    @app.post("/datasets", status_code=201)
    async def create_dataset(request: Request):
        data = await _body(request)
        name = _require(data, "name", str)
        doc_id = store.put("Dataset", {"name": name})
        return _doc_json(store.get("Dataset", doc_id))

    @app.get("/signals")
    async def list_signals(dataset: str | None = None):
        flt = {"dataset_id": dataset} if dataset else None
        return [_doc_json(d) for d in store.find("Signal", flt)]

    @app.post("/signals", status_code=201)
    async def create_signal(request: Request):
        data = await _body(request)
        body = {"name": _require(data, "name", str),
                "dataset_id": _require(data, "dataset_id", str),
                "data_uri": _require(data, "data_uri", str)}
        doc_id = store.put("Signal", body)
        return _doc_json(store.get("Signal", doc_id))

    @app.get("/signals/{signal_id}/data")
    async def signal_data(signal_id: str, t0: int | None = None,
                          t1: int | None = None, agg: int = 0):
        doc = _get_or_404(store, "Signal", signal_id)
        signal = _load_signal(doc)
        ts, vals = signal.timestamps, signal.values
        mask = np.ones(len(ts), dtype=bool)
        if t0 is not None:
            mask &= ts >= t0
        if t1 is not None:
            mask &= ts <= t1
        ts, vals = ts[mask], vals[mask]
        if agg < 0:
            raise ApiError(400, "bad_value", "agg must be >= 0", field="agg")
        if agg > 0 and len(ts) > 0:
            sliced = Signal(name=signal.name, timestamps=ts, values=vals)
            agg_signal = time_segments_aggregate(sliced, interval=agg, method="mean")
            ts, vals = agg_signal.timestamps, agg_signal.values
        if len(ts) > MAX_DATA_POINTS:
            raise ApiError(413, "too_many_points",
                           f"{len(ts)} points exceed the {MAX_DATA_POINTS} cap; "
                           "raise agg or narrow the range")
        values = [[None if math.isnan(v) else v for v in row] for row in vals.tolist()]
        return {"timestamps": ts.tolist(), "values": values}

    # --- events ---

    @app.get("/events")
    async def list_events(signal: str | None = None, t0: int | None = None,
                          t1: int | None = None):
        docs = store.find("Event")
        if signal:
            run_ids = {r.id for r in store.find("Signalrun", {"signal_id": signal})}
            docs = [d for d in docs
                    if d.body.get("signal_id") == signal
                    or d.body.get("signalrun_id") in run_ids]
        if t0 is not None:
            docs = [d for d in docs if d.body["t_e"] >= t0]
        if t1 is not None:
            docs = [d for d in docs if d.body["t_s"] <= t1]
        return [_doc_json(d) for d in docs]

    @app.post("/events", status_code=201)
    async def create_event(request: Request):
        data = await _body(request)
        signal_id = _require(data, "signal_id", str)
        t_s = _require(data, "t_s", int)
        t_e = _require(data, "t_e", int)
        if t_e <= t_s:
            raise ApiError(400, "bad_value", "t_e must be greater than t_s", field="t_e")
        _get_or_404(store, "Signal", signal_id)
        body = {"signal_id": signal_id, "signalrun_id": None, "t_s": t_s, "t_e": t_e,
                "severity": float(data.get("severity", 0.0)),
                "source": data.get("source", "manual")}
        if body["source"] not in ("manual", "detected"):
            raise ApiError(400, "bad_value", "source must be manual or detected",
                           field="source")
        event_id = store.put_linked(
            "Event", body, "EventInteraction",
            {"action": "create", "payload": {"t_s": t_s, "t_e": t_e}}, "event_id")
        return _doc_json(store.get("Event", event_id))

    @app.get("/events/{event_id}")
    async def get_event(event_id: str):
        return _doc_json(_get_or_404(store, "Event", event_id))

    @app.patch("/events/{event_id}")
    async def patch_event(event_id: str, request: Request):
        data = await _body(request)
        doc = _get_or_404(store, "Event", event_id)
        changes = {}
        for key in ("t_s", "t_e"):
            if key in data:
                changes[key] = _require(data, key, int)
        if not changes:
            raise ApiError(400, "missing_field", "nothing to change: provide t_s or t_e")
        new_ts = changes.get("t_s", doc.body["t_s"])
        new_te = changes.get("t_e", doc.body["t_e"])
        if new_te <= new_ts:
            raise ApiError(400, "bad_value", "t_e must be greater than t_s", field="t_e")
        old = {"t_s": doc.body["t_s"], "t_e": doc.body["t_e"]}
        updated = store.update("Event", event_id, changes, extra_docs=[
            ("EventInteraction", {"event_id": event_id, "action": "modify",
                                  "payload": {"old": old,
                                              "new": {"t_s": new_ts, "t_e": new_te}}})])
        return _doc_json(updated)

    @app.delete("/events/{event_id}")
    async def delete_event(event_id: str):
        _get_or_404(store, "Event", event_id)
        store.delete("Event", event_id, extra_docs=[
            ("EventInteraction", {"event_id": event_id, "action": "delete",
                                  "payload": {}})])
        return {"id": event_id, "deleted": True}

    @app.post("/events/{event_id}/annotations", status_code=201)
    async def annotate_event(event_id: str, request: Request):
        data = await _body(request)
        _get_or_404(store, "Event", event_id)
        tag = _require(data, "tag", str)
        user = _require(data, "user", str)
        if tag in ("confirmed", "normal", "investigate"):
            pass
        elif not tag.strip():
            raise ApiError(400, "bad_value", "tag must be nonempty", field="tag")
        ann_id, _ = store.put_batch([
            ("Annotation", {"event_id": event_id, "user": user, "tag": tag,
                            "comment": data.get("comment", "")}),
            ("EventInteraction", {"event_id": event_id, "action": "tag",
                                  "payload": {"tag": tag, "user": user}}),
        ])
        return _doc_json(store.get("Annotation", ann_id))

    @app.get("/events/{event_id}/annotations")
    async def list_annotations(event_id: str):
        _get_or_404(store, "Event", event_id)
        return [_doc_json(d) for d in store.find("Annotation", {"event_id": event_id})]

    @app.get("/events/{event_id}/interactions")
    async def list_interactions(event_id: str):
        if store.get("Event", event_id) is None:
            raise ApiError(404, "not_found", f"Event/{event_id} not found")
        return [_doc_json(d) for d in store.find("EventInteraction", {"event_id": event_id})]

    # --- experiments / dataruns ---

    @app.get("/experiments")
    async def list_experiments():
        return [_doc_json(d) for d in store.find("Experiment")]

    @app.post("/experiments", status_code=201)
    async def create_experiment(request: Request):
        data = await _body(request)
        body = {"name": _require(data, "name", str),
                "dataset_id": _require(data, "dataset_id", str),
                "template_id": _require(data, "template_id", str)}
        if "signal_ids" in data:
            body["signal_ids"] = _require(data, "signal_ids", list)
        doc_id = store.put("Experiment", body)
        return _doc_json(store.get("Experiment", doc_id))

    @app.post("/dataruns", status_code=201)
    async def create_datarun(request: Request):
        data = await _body(request)
        experiment_id = _require(data, "experiment_id", str)
        signal_ids = _require(data, "signal_ids", list)
        experiment = _get_or_404(store, "Experiment", experiment_id)
        template_doc = _get_or_404(store, "PipelineTemplate", experiment.body["template_id"])
        template = load_template(json.dumps(template_doc.body["definition"]))
        pipeline = instantiate(template, data.get("hyperparameters") or {})
        signals = [(sid, _load_signal(_get_or_404(store, "Signal", sid)))
                   for sid in signal_ids]
        datarun_id = store.put("Datarun", {"experiment_id": experiment_id})
        run_ids = []
        for sid, signal in signals:
            try:
                fitted = fit(pipeline, signal)
                events = detect(fitted, signal)
                run_ids.append(store.record_signalrun(datarun_id, sid, events))
            except TsadError as exc:
                run_ids.append(store.record_signalrun(
                    datarun_id, sid, EventList(()),
                    status=f"failed:{type(exc).__name__}"))
        doc = store.get("Datarun", datarun_id)
        return {**_doc_json(doc), "signalrun_ids": run_ids}

    @app.get("/dataruns/{datarun_id}")
    async def get_datarun(datarun_id: str):
        doc = _get_or_404(store, "Datarun", datarun_id)
        runs = store.find("Signalrun", {"datarun_id": datarun_id})
        return {**_doc_json(doc), "signalruns": [_doc_json(r) for r in runs]}

    # --- feedback ---

    @app.post("/feedback/retrain")
    async def retrain(request: Request):
        try:
            data = await _body(request)
        except ApiError:
            data = {}
        window_size = data.get("window_size", RETRAIN_WINDOW_SIZE)
        step = data.get("step", 1)
        annotations = store.find("Annotation")
        usable = [a for a in annotations if a.body["tag"] in ("confirmed", "normal")]
        state = app.state.retrain_state
        if state["model_id"] is not None and len(usable) == state["annotations_seen"]:
            model_doc = store.get("Pipeline", state["model_id"])
            return {"model_id": state["model_id"],
                    "n_labeled": model_doc.body["n_labeled"],
                    "metrics": model_doc.body["metrics"]}

        # latest annotation wins per event
        latest: dict[str, str] = {}
        for ann in usable:
            latest[ann.body["event_id"]] = ann.body["tag"]
        per_signal: dict[str, list[tuple[Event, str]]] = {}
        for event_id, tag in latest.items():
            event_doc = store.get("Event", event_id)
            if event_doc is None or event_doc.deleted:
                continue
            signal_id = event_doc.body.get("signal_id")
            if signal_id is None:
                run = store.get("Signalrun", event_doc.body["signalrun_id"])
                signal_id = run.body["signal_id"]
            event = Event(t_s=event_doc.body["t_s"], t_e=event_doc.body["t_e"],
                          severity=event_doc.body.get("severity", 0.0),
                          source=event_doc.body.get("source", "manual"))
            per_signal.setdefault(signal_id, []).append((event, tag))

        labeled = []
        for signal_id, annotated in per_signal.items():
            signal = _load_signal(_get_or_404(store, "Signal", signal_id))
            labeled.extend(build_training_set(signal, annotated, window_size, step))
        model = retrain_semisupervised(labeled)  # raises SingleClassData -> 409

        windows = np.stack([lw.window for lw in labeled])
        wanted = np.array([1.0 if lw.label == "anomalous" else 0.0 for lw in labeled])
        got = (logistic_predict_proba(model, windows) > 0.5).astype(float)
        metrics = {"train_accuracy": float((got == wanted).mean())}

        models_dir = store.root / "models"
        models_dir.mkdir(exist_ok=True)
        tmpl_docs = store.find("PipelineTemplate", {"name": "semisupervised_classifier"})
        if tmpl_docs:
            template_id = tmpl_docs[0].id
        else:
            template_id = store.put("PipelineTemplate", {
                "name": "semisupervised_classifier",
                "definition": {"kind": "window_classifier"}})
        model_id = store.put("Pipeline", {
            "template_id": template_id,
            "hyperparameters": {"window_size": window_size, "step": step},
            "n_labeled": len(labeled), "metrics": metrics,
            "model_uri": str(models_dir / "pending.json")})
        model_path = models_dir / f"{model_id}.json"
        model_path.write_text(json.dumps(model.to_dict()), encoding="utf-8")
        store.update("Pipeline", model_id, {"model_uri": str(model_path)})
        state["model_id"] = model_id
        state["annotations_seen"] = len(usable)
        return {"model_id": model_id, "n_labeled": len(labeled), "metrics": metrics}

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/static", StaticFiles(directory=static_dir, html=True), name="static")

    return app


def serve(config: ApiConfig):
    """Open the store, build the app, and run it (blocking)."""
    import uvicorn
    store = open_store(config.store_path)
    app = create_app(store, static_dir=config.static_dir, auth_token=config.auth_token)
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    finally:
        store.close()
