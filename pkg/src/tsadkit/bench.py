"""Benchmark harness: run pipelines x signals under identical conditions and
report quality (both segment metrics) plus compute (time, peak RSS).

The report is written as delimited CSV; the rendering path also saves
matplotlib figures (F1 by pipeline, train/detect timing) alongside it.
"""

from __future__ import annotations

import csv
import io
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import psutil

from .core import Event, EventList, Signal, load_signal_csv
from .errors import TsadError
from .metrics import Scores, overlapping_segment, score_from_confusion, weighted_segment
from .pipeline import Pipeline, detect_with_details, fit
from .primitives import get_primitive

REPORT_HEADER = ("pipeline,dataset,signal,f1_w,precision_w,recall_w,"
                 "f1_o,precision_o,recall_o,train_s,latency_s,peak_mem_bytes,status")


@dataclass(frozen=True)
class ComputeProfile:
    train_time_s: float
    detect_latency_s: float
    peak_memory_bytes: int  # 0 when sampling was unavailable
    per_step: dict[str, tuple[float, float]]  # step -> (fit_s, detect_s)


@dataclass(frozen=True)
class BenchmarkRow:
    pipeline: str
    dataset: str
    signal: str
    scores_weighted: Scores | None
    scores_overlapping: Scores | None
    profile: ComputeProfile | None
    status: str  # "ok" or "failed:<error>"


@dataclass(frozen=True)
class BenchmarkReport:
    rows: tuple[BenchmarkRow, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_HEADER.split(","))
        for r in self.rows:
            sw = r.scores_weighted or Scores(math.nan, math.nan, math.nan)
            so = r.scores_overlapping or Scores(math.nan, math.nan, math.nan)
            prof = r.profile
            writer.writerow([
                r.pipeline, r.dataset, r.signal,
                repr(sw.f1), repr(sw.precision), repr(sw.recall),
                repr(so.f1), repr(so.precision), repr(so.recall),
                repr(prof.train_time_s) if prof else "",
                repr(prof.detect_latency_s) if prof else "",
                prof.peak_memory_bytes if prof else "",
                r.status,
            ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BenchmarkReport":
        reader = csv.DictReader(io.StringIO(text))
        rows = []
        for rec in reader:
            def _f(key):
                return float(rec[key]) if rec[key] != "" else math.nan
            prof = None
            if rec["train_s"] != "":
                prof = ComputeProfile(train_time_s=float(rec["train_s"]),
                                      detect_latency_s=float(rec["latency_s"]),
                                      peak_memory_bytes=int(rec["peak_mem_bytes"] or 0),
                                      per_step={})
            rows.append(BenchmarkRow(
                pipeline=rec["pipeline"], dataset=rec["dataset"], signal=rec["signal"],
                scores_weighted=Scores(_f("precision_w"), _f("recall_w"), _f("f1_w")),
                scores_overlapping=Scores(_f("precision_o"), _f("recall_o"), _f("f1_o")),
                profile=prof, status=rec["status"]))
        return cls(rows=tuple(rows))


class _RssSampler:
    """Samples resident-set size on a background thread (>= 20 Hz)."""

    def __init__(self, interval: float = 0.02):
        self._interval = interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self.peak = 0

    def _run(self):
        proc = psutil.Process()
        while not self._stop.is_set():
            try:
                self.peak = max(self.peak, proc.memory_info().rss)
            except psutil.Error:
                break
            self._stop.wait(self._interval)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join(timeout=1.0)


def measure_compute(pipeline: Pipeline, signal: Signal,
                    truth: EventList | None = None):
    """Fit and detect with wall-clock timings and sampled peak memory."""
    with _RssSampler() as sampler:
        t0 = time.monotonic()
        fitted = fit(pipeline, signal, truth=truth)
        train_time = time.monotonic() - t0
        t0 = time.monotonic()
        events, detect_durations, _ = detect_with_details(fitted, signal)
        latency = time.monotonic() - t0
    per_step = {sid: (fitted.fit_durations.get(sid, 0.0), detect_durations.get(sid, 0.0))
                for sid in fitted.pipeline.template.exec_order}
    profile = ComputeProfile(train_time_s=train_time, detect_latency_s=latency,
                             peak_memory_bytes=sampler.peak, per_step=per_step)
    return events, profile


def profile_overhead(pipeline: Pipeline, signal: Signal) -> dict:
    """Compare running the primitives standalone (hand-threading the context)
    against the engine's orchestration of the same steps."""
    template = pipeline.template
    ctx = {"timestamps": signal.timestamps, "values": signal.values, "truth_events": None}
    standalone_total = 0.0
    for sid in template.exec_order:
        prim = get_primitive(template.step(sid).primitive)
        params = pipeline.params_for(sid)
        t0 = time.perf_counter()
        prim.fit(ctx, params)
        standalone_total += time.perf_counter() - t0
    standalone_events = ctx.get("events")

    from .pipeline import fit_context
    t0 = time.perf_counter()
    engine_ctx, _, _ = fit_context(pipeline, signal)
    pipeline_total = time.perf_counter() - t0
    delta = pipeline_total - standalone_total
    return {
        "standalone_total_s": standalone_total,
        "pipeline_total_s": pipeline_total,
        "delta_s": delta,
        "pct_increase": delta / standalone_total * 100.0,
        "standalone_events": standalone_events,
        "pipeline_events": engine_ctx.get("events"),
    }


def run_benchmark(pipelines: dict[str, Pipeline],
                  datasets: dict[str, list[tuple[Signal, EventList]]],
                  seed: int = 0, parallel: int = 1,
                  store=None, experiment_name: str = "benchmark") -> BenchmarkReport:
    """Every (pipeline, signal) cell is attempted; failures become rows with
    status failed:<error> rather than aborting the run.  Detection happens on
    the full signal (in-sample) unless the dataset supplies a split upstream."""
    cells = []
    for pname, pipeline in pipelines.items():
        for dname, entries in datasets.items():
            for signal, truth in entries:
                cells.append((pname, pipeline, dname, signal, truth))

    def run_cell(cell):
        pname, pipeline, dname, signal, truth = cell
        try:
            events, profile = measure_compute(pipeline, signal)
            span = (int(signal.timestamps[0]), int(signal.timestamps[-1]))
            clipped = _clip_events(truth, span)
            sw = score_from_confusion(weighted_segment(clipped, events, span))
            so = score_from_confusion(overlapping_segment(clipped, events))
            return BenchmarkRow(pipeline=pname, dataset=dname, signal=signal.name,
                                scores_weighted=sw, scores_overlapping=so,
                                profile=profile, status="ok"), events
        except TsadError as exc:
            return BenchmarkRow(pipeline=pname, dataset=dname, signal=signal.name,
                                scores_weighted=None, scores_overlapping=None,
                                profile=None, status=f"failed:{type(exc).__name__}"), None

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]

    if store is not None:
        _persist(store, experiment_name, cells, results)
    return BenchmarkReport(rows=tuple(r for r, _ in results))


def _clip_events(events: EventList, span: tuple[int, int]) -> EventList:
    t0, t1 = span
    out = []
    for e in events:
        s, t = max(e.t_s, t0), min(e.t_e, t1)
        if s < t:
            out.append(Event(t_s=s, t_e=t, severity=e.severity, source=e.source))
    return EventList(tuple(out))


def _persist(store, experiment_name, cells, results):
    """Record every benchmark cell's events in the knowledge base."""
    dataset_ids: dict[str, str] = {}
    signal_ids: dict[tuple[str, str], str] = {}
    template_ids: dict[str, str] = {}
    for (pname, pipeline, dname, signal, _truth), (row, events) in zip(cells, results):
        if dname not in dataset_ids:
            dataset_ids[dname] = store.put("Dataset", {"name": dname})
        key = (dname, signal.name)
        if key not in signal_ids:
            signal_ids[key] = store.put("Signal", {
                "name": signal.name, "dataset_id": dataset_ids[dname],
                "data_uri": signal.source_uri or f"memory://{signal.name}"})
        if pname not in template_ids:
            template_ids[pname] = store.put("PipelineTemplate", {
                "name": pname, "definition": pipeline.template.raw_def})
        exp_id = store.put("Experiment", {
            "name": f"{experiment_name}/{pname}/{dname}",
            "dataset_id": dataset_ids[dname], "template_id": template_ids[pname]})
        datarun_id = store.put("Datarun", {"experiment_id": exp_id})
        profile = None
        if row.profile is not None:
            profile = {"train_time_s": row.profile.train_time_s,
                       "detect_latency_s": row.profile.detect_latency_s,
                       "peak_memory_bytes": row.profile.peak_memory_bytes}
        store.record_signalrun(datarun_id, signal_ids[key],
                               events if events is not None else EventList(()),
                               status=row.status, profile=profile)


def render_report(report: BenchmarkReport, out_csv, figures: bool = True) -> list[str]:
    """Write the delimited report; also render summary figures next to it.
    Returns the list of files written."""
    out_csv = Path(out_csv)
    out_csv.write_text(report.to_csv(), encoding="utf-8")
    written = [str(out_csv)]
    if not figures:
        return written
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok_rows = [r for r in report.rows if r.status == "ok"]
    if ok_rows:
        pipelines = sorted({r.pipeline for r in ok_rows})

        def mean_of(rows, getter):
            vals = [getter(r) for r in rows]
            vals = [v for v in vals if v is not None and math.isfinite(v)]
            return float(np.mean(vals)) if vals else 0.0

        fig, ax = plt.subplots(figsize=(7, 4))
        x = np.arange(len(pipelines))
        f1w = [mean_of([r for r in ok_rows if r.pipeline == p], lambda r: r.scores_weighted.f1)
               for p in pipelines]
        f1o = [mean_of([r for r in ok_rows if r.pipeline == p], lambda r: r.scores_overlapping.f1)
               for p in pipelines]
        ax.bar(x - 0.2, f1w, width=0.4, label="weighted F1")
        ax.bar(x + 0.2, f1o, width=0.4, label="overlapping F1")
        ax.set_xticks(x, pipelines, rotation=15, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("mean F1")
        ax.set_title("Detection quality by pipeline")
        ax.legend()
        fig.tight_layout()
        f1_path = out_csv.with_name(out_csv.stem + "_f1.png")
        fig.savefig(f1_path, dpi=120)
        plt.close(fig)
        written.append(str(f1_path))

        fig, ax = plt.subplots(figsize=(7, 4))
        train = [mean_of([r for r in ok_rows if r.pipeline == p], lambda r: r.profile.train_time_s)
                 for p in pipelines]
        latency = [mean_of([r for r in ok_rows if r.pipeline == p], lambda r: r.profile.detect_latency_s)
                   for p in pipelines]
        ax.bar(x - 0.2, train, width=0.4, label="train time (s)")
        ax.bar(x + 0.2, latency, width=0.4, label="detect latency (s)")
        ax.set_xticks(x, pipelines, rotation=15, ha="right")
        ax.set_ylabel("seconds")
        ax.set_title("Compute cost by pipeline")
        ax.legend()
        fig.tight_layout()
        t_path = out_csv.with_name(out_csv.stem + "_timing.png")
        fig.savefig(t_path, dpi=120)
        plt.close(fig)
        written.append(str(t_path))
    return written


# --- dataset adapters ---

def load_signal_dir(path) -> list[tuple[Signal, EventList]]:
    """Directory of `<name>.csv` signals with `<name>_anomalies.csv` truths."""
    from .core import load_events_csv
    root = Path(path)
    out = []
    for csv_path in sorted(root.glob("*.csv")):
        if csv_path.stem.endswith("_anomalies"):
            continue
        truth_path = csv_path.with_name(csv_path.stem + "_anomalies.csv")
        truth = load_events_csv(truth_path) if truth_path.exists() else EventList(())
        out.append((load_signal_csv(csv_path, name=csv_path.stem), truth))
    return out


def _parse_nab_time(text: str) -> int:
    text = text.strip()
    for fmt in ("%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d %H:%M:%S"):
        try:
            return int(datetime.strptime(text, fmt).replace(tzinfo=timezone.utc).timestamp())
        except ValueError:
            continue
    raise ValueError(f"unparseable NAB timestamp {text!r}")


def load_nab(root) -> dict[str, list[tuple[Signal, EventList]]]:
    """Adapter for a local NAB checkout: per-signal CSVs under data/ plus the
    combined anomaly windows JSON under labels/."""
    root = Path(root)
    labels_path = root / "labels" / "combined_windows.json"
    with open(labels_path, "r", encoding="utf-8") as fh:
        windows = json.load(fh)
    datasets: dict[str, list[tuple[Signal, EventList]]] = {}
    for rel_path, intervals in sorted(windows.items()):
        csv_path = root / "data" / rel_path
        if not csv_path.exists():
            continue
        rows_ts, rows_v = [], []
        with open(csv_path, "r", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                rows_ts.append(_parse_nab_time(rec["timestamp"]))
                rows_v.append(float(rec["value"]))
        signal = Signal(name=rel_path, timestamps=np.array(rows_ts, dtype=np.int64),
                        values=np.array(rows_v).reshape(-1, 1), source_uri=str(csv_path))
        events = EventList(tuple(
            Event(t_s=_parse_nab_time(a), t_e=_parse_nab_time(b))
            for a, b in intervals))
        group = rel_path.split("/")[0]
        datasets.setdefault(group, []).append((signal, events))
    return datasets


def nab_counts(root) -> tuple[int, int]:
    """(signal count, anomaly window count) for a local NAB checkout."""
    datasets = load_nab(root)
    n_signals = sum(len(v) for v in datasets.values())
    n_windows = sum(len(truth) for v in datasets.values() for _, truth in v)
    return n_signals, n_windows
