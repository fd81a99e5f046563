"""Command-line entry point: fit/detect/evaluate/benchmark/tune plus serve,
simulate-feedback, and synthetic data generation.

Every subcommand is a thin wrapper over the library; given the same flags and
seed, outputs are byte-identical to the corresponding library calls.  Exit
codes: 0 success, 1 typed domain error, 2 usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .core import (
    AnomalySpec,
    SyntheticSpec,
    generate_synthetic,
    load_events_csv,
    load_signal_csv,
    write_events_csv,
    write_signal_csv,
)
from .errors import TsadError
from .metrics import overlapping_segment, score_from_confusion, weighted_segment
from .pipeline import (
    bundled_template,
    detect,
    fit,
    instantiate,
    load_fitted,
    load_template_file,
    save_fitted,
)
from .tuner import Objective, tune


def _load_template(ref: str):
    """Template by file path, or by bundled name when no such file exists."""
    path = Path(ref)
    if path.exists():
        return load_template_file(path)
    name = ref[:-5] if ref.endswith(".json") else ref
    try:
        return bundled_template(name)
    except FileNotFoundError:
        raise click.UsageError(f"template {ref!r}: no such file or bundled template")


def _parse_lambda(text: str | None) -> dict:
    if not text:
        return {}
    try:
        lam = json.loads(text)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"--hyperparameters is not valid JSON: {exc}")
    if not isinstance(lam, dict):
        raise click.UsageError("--hyperparameters must be a JSON object")
    return lam


def _merge_config(ctx_params: dict, config_path: str | None) -> dict:
    """Explicit flags win over config-file values."""
    if not config_path:
        return ctx_params
    with open(config_path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    merged = dict(config)
    merged.update({k: v for k, v in ctx_params.items() if v is not None})
    return merged


class _DomainErrors(click.Group):
    """Convert typed domain errors into exit code 1 with a clean message."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except TsadError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(1)


@click.group(cls=_DomainErrors)
@click.version_option(package_name="tsadkit")
def main():
    """Time-series anomaly detection toolkit."""


@main.command("fit")
@click.option("--template", "template_ref", required=True, help="Template file or bundled name.")
@click.option("--signal", "signal_path", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", type=click.Path(exists=True), help="Ground-truth events CSV (supervised templates).")
@click.option("--hyperparameters", help="JSON object of step.param assignments.")
@click.option("--save", "save_path", required=True, type=click.Path(), help="Where to write the fitted model.")
@click.option("--seed", type=int, default=0, show_default=True)
def fit_cmd(template_ref, signal_path, truth_path, hyperparameters, save_path, seed):
    """Fit a pipeline on a signal and save the fitted model."""
    template = _load_template(template_ref)
    lam = _parse_lambda(hyperparameters)
    pipeline = instantiate(template, lam)
    signal = load_signal_csv(signal_path)
    truth = load_events_csv(truth_path) if truth_path else None
    fitted = fit(pipeline, signal, truth=truth)
    save_fitted(fitted, save_path)
    click.echo(f"saved fitted pipeline to {save_path}")


@main.command("detect")
@click.option("--template", "template_ref", help="Template file or bundled name (fits on the signal first).")
@click.option("--load", "load_path", type=click.Path(exists=True), help="Previously saved fitted model (skips training).")
@click.option("--signal", "signal_path", required=True, type=click.Path(exists=True))
@click.option("--hyperparameters", help="JSON object of step.param assignments.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
def detect_cmd(template_ref, load_path, signal_path, hyperparameters, out_path, seed):
    """Detect anomalies; writes events CSV with header t_s,t_e,severity."""
    if (template_ref is None) == (load_path is None):
        raise click.UsageError("provide exactly one of --template or --load")
    signal = load_signal_csv(signal_path)
    if load_path:
        fitted = load_fitted(load_path)
    else:
        pipeline = instantiate(_load_template(template_ref), _parse_lambda(hyperparameters))
        fitted = fit(pipeline, signal)
    events = detect(fitted, signal)
    write_events_csv(events, out_path)
    click.echo(f"{len(events)} events -> {out_path}")


@main.command("evaluate")
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True))
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["weighted", "overlapping"]), default="weighted", show_default=True)
@click.option("--span", help="t0:t1 evaluation span (weighted); defaults to the union of both files' extents.")
def evaluate_cmd(truth_path, pred_path, method, span):
    """Score predicted events against ground truth; prints precision,recall,f1."""
    truth = load_events_csv(truth_path)
    pred = load_events_csv(pred_path)
    if method == "weighted":
        if span:
            try:
                t0, t1 = (int(x) for x in span.split(":"))
            except ValueError:
                raise click.UsageError("--span must look like t0:t1")
        else:
            edges = [e.t_s for e in truth] + [e.t_e for e in truth] \
                  + [e.t_s for e in pred] + [e.t_e for e in pred]
            if not edges:
                raise click.UsageError("both files empty and no --span given")
            t0, t1 = min(edges), max(edges)
        scores = score_from_confusion(weighted_segment(truth, pred, (t0, t1)))
    else:
        scores = score_from_confusion(overlapping_segment(truth, pred))
    click.echo(f"{scores.precision!r},{scores.recall!r},{scores.f1!r}")


@main.command("benchmark")
@click.option("--templates", required=True, help="Comma-separated template files or bundled names.")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False), help="Directory of <name>.csv with <name>_anomalies.csv truths.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--parallel", type=int, default=1, show_default=True)
@click.option("--no-figures", is_flag=True, help="Skip rendering the summary figures.")
@click.option("--seed", type=int, default=0, show_default=True)
def benchmark_cmd(templates, data_dir, out_path, parallel, no_figures, seed):
    """Run every template over every signal; failures become rows, not crashes."""
    from .bench import load_signal_dir, render_report, run_benchmark
    pipelines = {}
    for ref in templates.split(","):
        template = _load_template(ref.strip())
        pipelines[template.name] = instantiate(template, {})
    datasets = {Path(data_dir).name: load_signal_dir(data_dir)}
    report = run_benchmark(pipelines, datasets, seed=seed, parallel=parallel)
    written = render_report(report, out_path, figures=not no_figures)
    for path in written:
        click.echo(path)


@main.command("tune")
@click.option("--template", "template_ref", required=True)
@click.option("--signal", "signal_path", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", type=click.Path(exists=True))
@click.option("--objective", type=click.Choice(["unsupervised_mse", "unsupervised_mae", "supervised_f1"]), default="unsupervised_mse", show_default=True)
@click.option("--budget", type=int, default=30, show_default=True)
@click.option("--out", "out_path", type=click.Path(), help="Write the best assignment as JSON.")
@click.option("--trials-out", type=click.Path(), help="Write the full trial log as JSON lines.")
@click.option("--seed", type=int, default=0, show_default=True)
def tune_cmd(template_ref, signal_path, truth_path, objective, budget, out_path, trials_out, seed):
    """Bayesian-optimize a template's hyperparameters on one signal."""
    template = _load_template(template_ref)
    signal = load_signal_csv(signal_path)
    truth = load_events_csv(truth_path) if truth_path else None
    obj = Objective(kind=objective, signal=signal, truth=truth)
    best, log = tune(template, obj, budget=budget, seed=seed)
    best_record = max((r for r in log if np.isfinite(r.score)), key=lambda r: r.score)
    click.echo(json.dumps({"best_lambda": best_record.lam, "best_score": best_record.score}))
    if out_path:
        Path(out_path).write_text(json.dumps(best_record.lam, indent=2) + "\n", encoding="utf-8")
    if trials_out:
        lines = "\n".join(json.dumps(r.to_dict()) for r in log)
        Path(trials_out).write_text(lines + "\n", encoding="utf-8")


@main.command("serve")
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--static-dir", type=click.Path(exists=True, file_okay=False))
@click.option("--auth-token", help="Require this bearer token on every request.")
def serve_cmd(store_path, host, port, static_dir, auth_token):
    """Serve the HTTP API (and optionally the annotation UI assets)."""
    from .api import ApiConfig, serve
    serve(ApiConfig(host=host, port=port, store_path=store_path,
                    static_dir=static_dir, auth_token=auth_token))


@main.command("simulate-feedback")
@click.option("--template", "template_ref", required=True)
@click.option("--train-signal", required=True, type=click.Path(exists=True))
@click.option("--train-truth", required=True, type=click.Path(exists=True))
@click.option("--test-signal", required=True, type=click.Path(exists=True))
@click.option("--test-truth", required=True, type=click.Path(exists=True))
@click.option("--hyperparameters", help="JSON object for the unsupervised pipeline.")
@click.option("--k", type=int, default=2, show_default=True, help="Annotations per iteration.")
@click.option("--max-iters", type=int, default=50, show_default=True)
@click.option("--window-size", type=int, default=20, show_default=True)
@click.option("--out", "out_path", type=click.Path(), help="Trajectory JSON-lines file.")
@click.option("--seed", type=int, default=0, show_default=True)
def simulate_feedback_cmd(template_ref, train_signal, train_truth, test_signal,
                          test_truth, hyperparameters, k, max_iters, window_size,
                          out_path, seed):
    """Replay the annotate-retrain loop with a simulated annotator."""
    from .feedback import run_feedback_loop, trajectory_to_jsonl
    pipeline = instantiate(_load_template(template_ref), _parse_lambda(hyperparameters))
    trajectory = run_feedback_loop(
        load_signal_csv(train_signal), load_events_csv(train_truth),
        load_signal_csv(test_signal), load_events_csv(test_truth),
        pipeline, k=k, max_iters=max_iters, seed=seed, window_size=window_size)
    text = trajectory_to_jsonl(trajectory)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


@main.command("synth")
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--channels", type=int, default=1, show_default=True)
@click.option("--base", type=click.Choice(["sine", "ar1", "flat"]), default="sine", show_default=True)
@click.option("--noise-sd", type=float, default=0.05, show_default=True)
@click.option("--anomalies", type=int, default=3, show_default=True)
@click.option("--kind", type=click.Choice(["spike", "level_shift", "dropout"]), default="spike", show_default=True)
@click.option("--min-len", type=int, default=2, show_default=True)
@click.option("--max-len", type=int, default=20, show_default=True)
@click.option("--amp-sd", type=float, default=12.0, show_default=True, help="Peak deviation in noise-sd units.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--truth-out", type=click.Path(), help="Where to write the injected ground truth.")
@click.option("--seed", type=int, default=0, show_default=True)
def synth_cmd(n, channels, base, noise_sd, anomalies, kind, min_len, max_len,
              amp_sd, out_path, truth_out, seed):
    """Generate a synthetic signal with known injected anomalies."""
    spec = SyntheticSpec(n=n, m=channels, base=base, noise_sd=noise_sd, seed=seed,
                         anomalies=AnomalySpec(count=anomalies, kind=kind,
                                               min_len=min_len, max_len=max_len,
                                               amp_sd=amp_sd))
    signal, truth = generate_synthetic(spec)
    write_signal_csv(signal, out_path)
    if truth_out:
        write_events_csv(truth, truth_out)
    click.echo(f"{signal.n} samples, {len(truth)} anomalies -> {out_path}")


if __name__ == "__main__":
    main()
