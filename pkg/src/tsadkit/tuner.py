"""Gaussian-process Bayesian optimization over a template's tunable space.

Hyperparameters are embedded in the unit cube (linear scaling for ranges,
one-hot for categoricals and booleans).  The GP is zero-mean on standardized
scores with a fixed RBF kernel; acquisition is Expected Improvement maximized
over seeded uniform candidates, which handles the mixed discrete/continuous
space without gradients.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import EventList, Signal
from .errors import AllTrialsFailed, BudgetExhausted, NumericalFailure, OutOfRange
from .metrics import overlapping_segment, score_from_confusion
from .pipeline import Pipeline, Template, detect, fit, fit_context, hyperparameter_space, instantiate
from .primitives import HyperparamSpec

N_RANDOM_INIT = 5
N_CANDIDATES = 1000
KERNEL_SIGNAL_VAR = 1.0
BASE_NOISE = 1e-6
MAX_NOISE = 1e-2


@dataclass(frozen=True)
class SpaceEncoder:
    """Bijection between hyperparameter assignments and points in [0,1]^d."""

    space: tuple[tuple[str, HyperparamSpec], ...]

    @property
    def dim(self) -> int:
        return sum(self._width(spec) for _, spec in self.space)

    @staticmethod
    def _width(spec: HyperparamSpec) -> int:
        if spec.kind == "categorical":
            return len(spec.choices)
        if spec.kind == "boolean":
            return 2
        return 1

    def encode(self, lam: dict) -> np.ndarray:
        out = []
        for key, spec in self.space:
            value = lam.get(key, spec.default)
            if not spec.contains(value):
                raise OutOfRange(f"{key}={value!r} outside its spec")
            if spec.kind in ("int_range", "float_range"):
                out.append((float(value) - spec.lo) / (spec.hi - spec.lo))
            elif spec.kind == "categorical":
                onehot = [0.0] * len(spec.choices)
                onehot[spec.choices.index(value)] = 1.0
                out.extend(onehot)
            else:
                out.extend([1.0, 0.0] if bool(value) else [0.0, 1.0])
        return np.array(out)

    def decode(self, point: np.ndarray) -> dict:
        lam = {}
        i = 0
        for key, spec in self.space:
            if spec.kind == "int_range":
                raw = spec.lo + point[i] * (spec.hi - spec.lo)
                lam[key] = int(min(max(math.floor(raw + 0.5), spec.lo), spec.hi))
                i += 1
            elif spec.kind == "float_range":
                lam[key] = float(spec.lo + point[i] * (spec.hi - spec.lo))
                i += 1
            elif spec.kind == "categorical":
                width = len(spec.choices)
                lam[key] = spec.choices[int(np.argmax(point[i:i + width]))]
                i += width
            else:
                lam[key] = bool(point[i] >= point[i + 1])
                i += 2
        return lam


def rbf_kernel(a: np.ndarray, b: np.ndarray, length_scale: float) -> np.ndarray:
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return KERNEL_SIGNAL_VAR * np.exp(-sq / (2 * length_scale ** 2))


def gp_posterior(xs: np.ndarray, ys: np.ndarray, candidates: np.ndarray):
    """Posterior mean/variance at candidate points, on the raw score scale.

    Zero-mean GP over standardized scores; Cholesky failures retry with the
    diagonal noise scaled up tenfold, to a cap."""
    xs = np.atleast_2d(xs)
    candidates = np.atleast_2d(candidates)
    d = xs.shape[1]
    length_scale = 0.1 * math.sqrt(d)
    y_mean = ys.mean()
    y_sd = ys.std()
    ys_std = (ys - y_mean) / y_sd if y_sd > 0 else ys - y_mean

    k_xx = rbf_kernel(xs, xs, length_scale)
    noise = BASE_NOISE
    chol = None
    while noise <= MAX_NOISE:
        try:
            chol = np.linalg.cholesky(k_xx + noise * np.eye(len(xs)))
            break
        except np.linalg.LinAlgError:
            noise *= 10
    if chol is None:
        raise NumericalFailure("kernel matrix not positive definite even at max jitter")

    k_xc = rbf_kernel(xs, candidates, length_scale)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, ys_std))
    mean_std = k_xc.T @ alpha
    v = np.linalg.solve(chol, k_xc)
    var_std = np.clip(KERNEL_SIGNAL_VAR - (v ** 2).sum(axis=0), 0.0, None)

    scale = y_sd if y_sd > 0 else 1.0
    return mean_std * scale + y_mean, var_std * scale ** 2


def _norm_cdf(u):
    return 0.5 * (1.0 + np.vectorize(math.erf)(u / math.sqrt(2.0)))


def _norm_pdf(u):
    return np.exp(-0.5 * u ** 2) / math.sqrt(2.0 * math.pi)


def expected_improvement(mean: np.ndarray, var: np.ndarray, best: float) -> np.ndarray:
    sd = np.sqrt(var)
    ei = np.where(sd > 0, 0.0, np.maximum(mean - best, 0.0))
    mask = sd > 0
    if mask.any():
        u = (mean[mask] - best) / sd[mask]
        ei_m = (mean[mask] - best) * _norm_cdf(u) + sd[mask] * _norm_pdf(u)
        ei = ei.copy()
        ei[mask] = np.maximum(ei_m, 0.0)
    return ei


@dataclass
class TuningSession:
    """Sequentially-owned optimization state; trials condition the GP."""

    encoder: SpaceEncoder
    budget: int
    seed: int
    trials: list[tuple[np.ndarray, float]] = field(default_factory=list)
    rng: np.random.Generator = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @property
    def best(self) -> tuple[np.ndarray, float] | None:
        finite = [t for t in self.trials if math.isfinite(t[1])]
        return max(finite, key=lambda t: t[1]) if finite else None

    def propose(self) -> dict:
        """Next hyperparameter assignment: seeded uniform for the first few
        trials, then the EI argmax over seeded uniform candidates."""
        if len(self.trials) >= self.budget:
            raise BudgetExhausted(f"budget of {self.budget} trials spent")
        d = self.encoder.dim
        if len(self.trials) < N_RANDOM_INIT or self.best is None:
            return self.encoder.decode(self.rng.uniform(size=d))
        xs = np.array([t[0] for t in self.trials if math.isfinite(t[1])])
        ys = np.array([t[1] for t in self.trials if math.isfinite(t[1])])
        candidates = self.rng.uniform(size=(N_CANDIDATES, d))
        mean, var = gp_posterior(xs, ys, candidates)
        ei = expected_improvement(mean, var, self.best[1])
        return self.encoder.decode(candidates[int(np.argmax(ei))])  # ties -> lowest index

    def record(self, lam: dict, score: float) -> None:
        self.trials.append((self.encoder.encode(lam), score))


@dataclass(frozen=True)
class Objective:
    """Pipeline scoring: reconstruction error (unsupervised) or event F1
    (supervised, ground truth required)."""

    kind: str  # unsupervised_mse | unsupervised_mae | supervised_f1
    signal: Signal
    truth: EventList | None = None

    def __post_init__(self):
        if self.kind not in ("unsupervised_mse", "unsupervised_mae", "supervised_f1"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "supervised_f1" and (self.truth is None or len(self.truth) == 0):
            raise ValueError("supervised objective requires nonempty ground truth")

    @property
    def scope(self) -> str:
        return "full" if self.kind == "supervised_f1" else "unsupervised_subpipeline"

    def evaluate(self, pipeline: Pipeline) -> float:
        if self.kind == "supervised_f1":
            fitted = fit(pipeline, self.signal, truth=self.truth)
            events = detect(fitted, self.signal)
            scores = score_from_confusion(overlapping_segment(self.truth, events))
            return scores.f1 if math.isfinite(scores.f1) else 0.0
        ctx, _, _ = fit_context(pipeline, self.signal,
                                engines={"preprocessing", "modeling"})
        diff = np.asarray(ctx["predictions"]) - np.asarray(ctx["targets"])
        if self.kind == "unsupervised_mse":
            return -float(np.mean(diff ** 2))
        return -float(np.mean(np.abs(diff)))


@dataclass(frozen=True)
class TrialRecord:
    index: int
    lam: dict
    score: float
    duration_s: float

    def to_dict(self):
        return {"index": self.index, "lambda": self.lam, "score": self.score,
                "duration_s": self.duration_s}


def tune(template: Template, objective: Objective, budget: int, seed: int = 0,
         scope: str | None = None) -> tuple[Pipeline, list[TrialRecord]]:
    """Propose/evaluate/record until the budget runs out.

    Trial 1 always evaluates the template defaults, so the returned best is
    never worse than the default pipeline.  Failed evaluations score -inf and
    the search continues."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = hyperparameter_space(template, scope or objective.scope)
    encoder = SpaceEncoder(tuple(space))
    session = TuningSession(encoder=encoder, budget=budget, seed=seed)
    log: list[TrialRecord] = []
    for index in range(1, budget + 1):
        if index == 1:
            lam = {key: spec.default for key, spec in space}
        else:
            lam = session.propose()
        start = time.perf_counter()
        try:
            score = objective.evaluate(instantiate(template, lam))
        except Exception:
            score = -math.inf
        duration = time.perf_counter() - start
        session.record(lam, score)
        log.append(TrialRecord(index=index, lam=lam, score=score, duration_s=duration))
    best = session.best
    if best is None:
        raise AllTrialsFailed("every trial failed to evaluate")
    best_record = max((r for r in log if math.isfinite(r.score)), key=lambda r: r.score)
    return instantiate(template, best_record.lam), log
