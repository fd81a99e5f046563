"""Modeling primitives: AR least-squares forecaster, small MLP forecaster,
dense autoencoder, and a logistic window classifier.

These are deliberately small from-scratch numerics. Training is full-batch
gradient descent with no early stopping, deterministic per seed, so repeated
fits are bit-identical and benchmark timings are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonFiniteLoss, ShapeMismatch, SingleClassData, SingularSystem

RIDGE_JITTER = 1e-8


def _flatten(windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows, dtype=np.float64)
    return windows.reshape(windows.shape[0], -1)


@dataclass(frozen=True)
class ArModel:
    """Per-channel AR coefficients: predicted = window @ coef + intercept."""

    coef: np.ndarray       # (w, m)
    intercept: np.ndarray  # (m,)
    window_size: int
    channels: int

    def to_dict(self):
        return {"kind": "ar", "coef": self.coef.tolist(),
                "intercept": self.intercept.tolist(),
                "window_size": self.window_size, "channels": self.channels}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["coef"]), np.array(d["intercept"]),
                   d["window_size"], d["channels"])


def fit_ar(windows: np.ndarray, targets: np.ndarray) -> ArModel:
    """Ordinary least squares on the lag vector, via normal equations with a
    small ridge jitter. Multichannel signals fit each channel independently."""
    windows = np.asarray(windows, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if windows.ndim != 3 or targets.ndim != 2 or windows.shape[0] != targets.shape[0]:
        raise ShapeMismatch(f"windows {windows.shape} vs targets {targets.shape}")
    _, w, m = windows.shape
    coef = np.zeros((w, m))
    intercept = np.zeros(m)
    for c in range(m):
        X = np.hstack([windows[:, :, c], np.ones((windows.shape[0], 1))])
        y = targets[:, c]
        gram = X.T @ X + RIDGE_JITTER * np.eye(w + 1)
        try:
            beta = np.linalg.solve(gram, X.T @ y)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"channel {c}: {exc}") from exc
        if not np.all(np.isfinite(beta)):
            raise SingularSystem(f"channel {c}: non-finite solution")
        coef[:, c] = beta[:-1]
        intercept[c] = beta[-1]
    return ArModel(coef=coef, intercept=intercept, window_size=w, channels=m)


def ar_predict(model: ArModel, windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[1] != model.window_size or windows.shape[2] != model.channels:
        raise ShapeMismatch(f"windows {windows.shape} do not match trained "
                            f"shape (*, {model.window_size}, {model.channels})")
    out = np.empty((windows.shape[0], model.channels))
    for c in range(model.channels):
        out[:, c] = windows[:, :, c] @ model.coef[:, c] + model.intercept[c]
    return out


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int):
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=(fan_in, fan_out)), np.zeros(fan_out)


@dataclass(frozen=True)
class MlpModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    in_shape: tuple  # (w, m)
    loss_trajectory: tuple

    def to_dict(self):
        return {"kind": "mlp", "w1": self.w1.tolist(), "b1": self.b1.tolist(),
                "w2": self.w2.tolist(), "b2": self.b2.tolist(),
                "in_shape": list(self.in_shape)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["w1"]), np.array(d["b1"]), np.array(d["w2"]),
                   np.array(d["b2"]), tuple(d["in_shape"]), ())


def fit_mlp(windows, targets, hidden: int = 32, lr: float = 0.01,
            epochs: int = 200, seed: int = 0) -> MlpModel:
    """One hidden tanh layer, linear output, full-batch gradient descent on MSE."""
    X = _flatten(windows)
    y = np.asarray(targets, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{X.shape[0]} windows vs {y.shape[0]} targets")
    rng = np.random.default_rng(seed)
    w1, b1 = _init_layer(rng, X.shape[1], hidden)
    w2, b2 = _init_layer(rng, hidden, y.shape[1])
    n = X.shape[0]
    losses = []
    for _ in range(epochs):
        h = np.tanh(X @ w1 + b1)
        pred = h @ w2 + b2
        diff = pred - y
        with np.errstate(over="ignore"):
            loss = float(np.mean(diff ** 2))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"mlp diverged at epoch {len(losses)}")
        losses.append(loss)
        g_pred = 2.0 * diff / (n * y.shape[1])
        g_w2 = h.T @ g_pred
        g_b2 = g_pred.sum(axis=0)
        g_h = g_pred @ w2.T * (1 - h ** 2)
        g_w1 = X.T @ g_h
        g_b1 = g_h.sum(axis=0)
        w1 -= lr * g_w1
        b1 -= lr * g_b1
        w2 -= lr * g_w2
        b2 -= lr * g_b2
    return MlpModel(w1, b1, w2, b2,
                    in_shape=(np.asarray(windows).shape[1], np.asarray(windows).shape[2]),
                    loss_trajectory=tuple(losses))


def mlp_predict(model: MlpModel, windows) -> np.ndarray:
    X = _flatten(windows)
    if X.shape[1] != model.w1.shape[0]:
        raise ShapeMismatch(f"input dim {X.shape[1]} != trained {model.w1.shape[0]}")
    h = np.tanh(X @ model.w1 + model.b1)
    return h @ model.w2 + model.b2


@dataclass(frozen=True)
class AeModel:
    w_enc: np.ndarray
    b_enc: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray
    in_shape: tuple
    loss_trajectory: tuple

    def to_dict(self):
        return {"kind": "dense_ae", "w_enc": self.w_enc.tolist(), "b_enc": self.b_enc.tolist(),
                "w_dec": self.w_dec.tolist(), "b_dec": self.b_dec.tolist(),
                "in_shape": list(self.in_shape)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["w_enc"]), np.array(d["b_enc"]), np.array(d["w_dec"]),
                   np.array(d["b_dec"]), tuple(d["in_shape"]), ())


def fit_dense_ae(windows, latent_dim: int = 5, lr: float = 0.05,
                 epochs: int = 500, seed: int = 0) -> AeModel:
    """Linear+tanh encoder to latent_dim, linear decoder back; full-batch GD on MSE."""
    X = _flatten(windows)
    d = X.shape[1]
    if latent_dim >= d:
        raise ValueError(f"latent_dim {latent_dim} must be < flattened window size {d}")
    rng = np.random.default_rng(seed)
    w_enc, b_enc = _init_layer(rng, d, latent_dim)
    w_dec, b_dec = _init_layer(rng, latent_dim, d)
    n = X.shape[0]
    losses = []
    for _ in range(epochs):
        z = np.tanh(X @ w_enc + b_enc)
        recon = z @ w_dec + b_dec
        diff = recon - X
        loss = float(np.mean(diff ** 2))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"autoencoder diverged at epoch {len(losses)}")
        losses.append(loss)
        g_recon = 2.0 * diff / (n * d)
        g_wd = z.T @ g_recon
        g_bd = g_recon.sum(axis=0)
        g_z = g_recon @ w_dec.T * (1 - z ** 2)
        g_we = X.T @ g_z
        g_be = g_z.sum(axis=0)
        w_enc -= lr * g_we
        b_enc -= lr * g_be
        w_dec -= lr * g_wd
        b_dec -= lr * g_bd
    shape = np.asarray(windows).shape
    return AeModel(w_enc, b_enc, w_dec, b_dec, in_shape=(shape[1], shape[2]),
                   loss_trajectory=tuple(losses))


def ae_reconstruct(model: AeModel, windows) -> np.ndarray:
    X = _flatten(windows)
    if X.shape[1] != model.w_enc.shape[0]:
        raise ShapeMismatch(f"input dim {X.shape[1]} != trained {model.w_enc.shape[0]}")
    z = np.tanh(X @ model.w_enc + model.b_enc)
    recon = z @ model.w_dec + model.b_dec
    return recon.reshape(np.asarray(windows).shape)


# --- logistic window classifier (shared by the supervised pipeline and feedback) ---

def window_features(windows: np.ndarray) -> np.ndarray:
    """Raw window values plus mean, sd, and max-abs first difference per window."""
    windows = np.asarray(windows, dtype=np.float64)
    flat = windows.reshape(windows.shape[0], -1)
    mean = flat.mean(axis=1, keepdims=True)
    sd = flat.std(axis=1, keepdims=True)
    if windows.shape[1] >= 2:
        d1 = np.max(np.abs(np.diff(windows, axis=1)), axis=(1, 2)).reshape(-1, 1)
    else:
        d1 = np.zeros((windows.shape[0], 1))
    return np.hstack([flat, mean, sd, d1])


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    feat_mean: np.ndarray
    feat_sd: np.ndarray
    in_shape: tuple
    loss_trajectory: tuple

    def to_dict(self):
        return {"kind": "logistic", "weights": self.weights.tolist(), "bias": self.bias,
                "feat_mean": self.feat_mean.tolist(), "feat_sd": self.feat_sd.tolist(),
                "in_shape": list(self.in_shape)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["weights"]), d["bias"], np.array(d["feat_mean"]),
                   np.array(d["feat_sd"]), tuple(d["in_shape"]), ())


def fit_logistic_windows(windows, labels, lr: float = 0.5, epochs: int = 500,
                         seed: int = 0) -> LogisticModel:
    """Logistic regression over window_features, full-batch GD, standardized inputs."""
    y = np.asarray(labels, dtype=np.float64)
    if len(set(np.unique(y)) & {0.0, 1.0}) < 2:
        raise SingleClassData("need at least one example of each class")
    F = window_features(windows)
    feat_mean = F.mean(axis=0)
    feat_sd = F.std(axis=0)
    feat_sd[feat_sd == 0] = 1.0
    X = (F - feat_mean) / feat_sd
    rng = np.random.default_rng(seed)
    w = rng.normal(0, 0.01, size=X.shape[1])
    b = 0.0
    n = X.shape[0]
    losses = []
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(X @ w + b)))
        eps = 1e-12
        loss = float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
        if not np.isfinite(loss):
            raise NonFiniteLoss("logistic training diverged")
        losses.append(loss)
        g = (p - y) / n
        w -= lr * (X.T @ g)
        b -= lr * float(g.sum())
    shape = np.asarray(windows).shape
    return LogisticModel(w, b, feat_mean, feat_sd, in_shape=(shape[1], shape[2]),
                         loss_trajectory=tuple(losses))


def logistic_predict_proba(model: LogisticModel, windows) -> np.ndarray:
    F = window_features(windows)
    if F.shape[1] != model.weights.shape[0]:
        raise ShapeMismatch(f"feature dim {F.shape[1]} != trained {model.weights.shape[0]}")
    X = (F - model.feat_mean) / model.feat_sd
    return 1.0 / (1.0 + np.exp(-(X @ model.weights + model.bias)))


MODEL_CLASSES = {"ar": ArModel, "mlp": MlpModel, "dense_ae": AeModel, "logistic": LogisticModel}


def model_from_dict(d):
    return MODEL_CLASSES[d["kind"]].from_dict(d)
