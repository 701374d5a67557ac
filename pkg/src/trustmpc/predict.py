"""Estimators of the AV plan as the human driver expects it.

Two estimators are provided: constant-acceleration extrapolation of the last
observed AV acceleration, and a single-layer GRU that maps the last ``H``
observations of (gap, relative speed, time headway, AV acceleration) to the
next ``N`` AV accelerations.

The GRU uses the gating of Cho et al. (2014)::

    z  = sigmoid(x Wz^T + h Uz^T + bz)
    r  = sigmoid(x Wr^T + h Ur^T + br)
    c  = tanh(x Wh^T + (r * h) Uh^T + bh)
    h' = z * h + (1 - z) * c

and a linear readout of the final hidden state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import ContractError
from .io import atomic_write_text

FEATURES = ("gap", "rel_speed", "headway", "u_av")
MODEL_FORMAT = "trustmpc-gru"
MODEL_VERSION = 1
PARAM_NAMES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh", "Wo", "bo")


class ModelNotReady(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


def predict_ca(last_u_av: float, N: int) -> np.ndarray:
    return np.full(N, float(last_u_av))


def feature_row(gap_h: float, v_av: float, v_h: float, u_av: float, v_floor: float = 0.1) -> np.ndarray:
    """One input row seen by the human: gap to the AV, AV-minus-human speed,
    time headway and the AV acceleration."""
    return np.array([gap_h, v_av - v_h, gap_h / max(v_h, v_floor), u_av])


@dataclass(frozen=True, eq=False)
class PredictorWindow:
    """``H`` feature rows ordered oldest to newest."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != len(FEATURES) or rows.shape[0] < 1:
            raise ContractError(f"window must have shape (H, {len(FEATURES)}), got {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ContractError("window contains non-finite features")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_history(cls, history: Sequence[np.ndarray], H: int) -> "PredictorWindow":
        """Last ``H`` rows of ``history``; short histories are front-padded
        by repeating the earliest row."""
        if not len(history):
            raise ContractError("cannot form a window from an empty history")
        rows = list(history[-H:])
        rows = [rows[0]] * (H - len(rows)) + rows
        return cls(np.array(rows))

    @property
    def H(self) -> int:
        return self.rows.shape[0]

    @property
    def last_u_av(self) -> float:
        return float(self.rows[-1, 3])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(eq=False)
class GruModel:
    """Single-layer GRU with a linear readout to ``N`` accelerations.

    A freshly constructed model holds random weights and no normalization
    statistics; it refuses to predict until trained or loaded.
    """

    hidden: int = 32
    N: int = 3
    n_in: int = len(FEATURES)
    seed: int = 0
    params: dict = field(default=None, repr=False)
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    ready: bool = False

    def __post_init__(self):
        if self.params is None:
            rng = np.random.default_rng(self.seed)
            k = 1.0 / math.sqrt(self.hidden)
            self.params = {}
            for name, shape in self.shapes().items():
                self.params[name] = rng.uniform(-k, k, size=shape)
        else:
            self.params = {k: np.array(v, dtype=float) for k, v in self.params.items()}
            for name, shape in self.shapes().items():
                if self.params[name].shape != shape:
                    raise ContractError(f"{name} has shape {self.params[name].shape}, expected {shape}")
        if self.mean is not None:
            self.set_normalization(self.mean, self.std)

    def shapes(self) -> dict:
        h, n, N = self.hidden, self.n_in, self.N
        s = {}
        for g in "zrh":
            s[f"W{g}"] = (h, n)
            s[f"U{g}"] = (h, h)
            s[f"b{g}"] = (h,)
        s["Wo"] = (N, h)
        s["bo"] = (N,)
        return s

    def set_normalization(self, mean, std):
        mean = np.asarray(mean, dtype=float)
        std = np.asarray(std, dtype=float)
        if mean.shape != (self.n_in,) or std.shape != (self.n_in,):
            raise ContractError("normalization statistics must have one entry per feature")
        if not np.all(std > 0):
            raise ContractError(f"normalization std must be strictly positive, got {std}")
        self.mean, self.std = mean, std

    def copy(self) -> "GruModel":
        return GruModel(
            self.hidden, self.N, self.n_in, self.seed,
            {k: v.copy() for k, v in self.params.items()},
            None if self.mean is None else self.mean.copy(),
            None if self.std is None else self.std.copy(),
            self.ready,
        )

    # forward / backward on normalized input of shape (B, H, n_in)

    def forward(self, X: np.ndarray, cache: bool = False):
        p = self.params
        B, H, _ = X.shape
        h = np.zeros((B, self.hidden))
        steps = []
        for t in range(H):
            x = X[:, t, :]
            z = _sigmoid(x @ p["Wz"].T + h @ p["Uz"].T + p["bz"])
            r = _sigmoid(x @ p["Wr"].T + h @ p["Ur"].T + p["br"])
            c = np.tanh(x @ p["Wh"].T + (r * h) @ p["Uh"].T + p["bh"])
            if cache:
                steps.append((x, h, z, r, c))
            h = z * h + (1.0 - z) * c
        y = h @ p["Wo"].T + p["bo"]
        if cache:
            return y, (steps, h)
        return y

    def backward(self, dy: np.ndarray, cache) -> dict:
        """Gradients of a loss w.r.t. every parameter given dL/dy."""
        p = self.params
        steps, h_last = cache
        g = {k: np.zeros_like(v) for k, v in p.items()}
        g["Wo"] = dy.T @ h_last
        g["bo"] = dy.sum(axis=0)
        dh = dy @ p["Wo"]
        for x, h_prev, z, r, c in reversed(steps):
            dz = dh * (h_prev - c)
            dc = dh * (1.0 - z)
            dh_prev = dh * z
            dc_pre = dc * (1.0 - c * c)
            g["Wh"] += dc_pre.T @ x
            g["Uh"] += dc_pre.T @ (r * h_prev)
            g["bh"] += dc_pre.sum(axis=0)
            drh = dc_pre @ p["Uh"]
            dr = drh * h_prev
            dh_prev += drh * r
            dr_pre = dr * r * (1.0 - r)
            dz_pre = dz * z * (1.0 - z)
            g["Wr"] += dr_pre.T @ x
            g["Ur"] += dr_pre.T @ h_prev
            g["br"] += dr_pre.sum(axis=0)
            g["Wz"] += dz_pre.T @ x
            g["Uz"] += dz_pre.T @ h_prev
            g["bz"] += dz_pre.sum(axis=0)
            dh_prev += dr_pre @ p["Ur"] + dz_pre @ p["Uz"]
            dh = dh_prev
        return g

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        if not self.ready or self.mean is None:
            raise ModelNotReady("GRU model is not trained or loaded")
        return self.forward(self.normalize(np.asarray(X, dtype=float)))

    # serialization

    def to_json(self) -> str:
        if self.mean is None:
            raise ModelNotReady("cannot serialize a model without normalization statistics")
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "input_size": self.n_in,
            "hidden_size": self.hidden,
            "output_size": self.N,
            "features": list(FEATURES),
            "feature_mean": self.mean.tolist(),
            "feature_std": self.std.tolist(),
            "layers": {
                k: {"shape": list(self.params[k].shape), "data": self.params[k].ravel().tolist()}
                for k in PARAM_NAMES
            },
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GruModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} model file")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        params = {
            k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["layers"].items()
        }
        return cls(
            hidden=doc["hidden_size"], N=doc["output_size"], n_in=doc["input_size"], params=params,
            mean=np.array(doc["feature_mean"]), std=np.array(doc["feature_std"]), ready=True,
        )

    def save(self, path) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "GruModel":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


def predict_gru(model: GruModel, window: PredictorWindow) -> np.ndarray:
    """Predicted next ``N`` AV accelerations; not clamped to actuator bounds."""
    return model.predict_batch(window.rows[None])[0]


# -- dataset & training ----------------------------------------------------


@dataclass
class Dataset:
    X_train: np.ndarray
    Y_train: np.ndarray
    X_val: np.ndarray
    Y_val: np.ndarray

    def __len__(self):
        return len(self.X_train) + len(self.X_val)


def log_features(log, v_floor: float = 0.1) -> np.ndarray:
    """Feature rows for every step of a run log, shape (steps, 4)."""
    v_h = np.maximum(log.v_h, v_floor)
    return np.column_stack([log.gap_h, log.v_av - log.v_h, log.gap_h / v_h, log.u_av])


def windows(features: np.ndarray, u_av: np.ndarray, H: int, N: int):
    """Stride-1 windows: rows t-H..t-1 paired with executed accelerations t..t+N-1."""
    L = len(u_av)
    n = L - H - N + 1
    if n < 1:
        raise ContractError(f"log of length {L} is shorter than H + N = {H + N}")
    X = np.stack([features[t - H:t] for t in range(H, H + n)])
    Y = np.stack([u_av[t:t + N] for t in range(H, H + n)])
    return X, Y


def build_dataset(logs: Iterable, H: int = 10, N: int = 3, val_frac: float = 0.2, v_floor: float = 0.1) -> Dataset:
    """Sliding-window pairs from run logs.

    Windows of all logs are concatenated in the order given and split
    chronologically: the last ``val_frac`` of the sequence is validation.
    """
    logs = list(logs)
    if not logs:
        raise ContractError("no run logs given")
    Xs, Ys = [], []
    for log in logs:
        X, Y = windows(log_features(log, v_floor), np.asarray(log.u_av), H, N)
        Xs.append(X)
        Ys.append(Y)
    X, Y = np.concatenate(Xs), np.concatenate(Ys)
    cut = len(X) - int(round(val_frac * len(X)))
    return Dataset(X[:cut], Y[:cut], X[cut:], Y[cut:])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


def mse_loss(model: GruModel, X: np.ndarray, Y: np.ndarray) -> float:
    return float(np.mean((model.forward(X) - Y) ** 2))


def loss_and_grad(model: GruModel, X: np.ndarray, Y: np.ndarray):
    """Mean squared error over the batch and outputs, and its gradient."""
    y, cache = model.forward(X, cache=True)
    diff = y - Y
    loss = float(np.mean(diff ** 2))
    grads = model.backward(2.0 * diff / diff.size, cache)
    return loss, grads


def train_gru(model: GruModel, data: Dataset, config: TrainConfig = TrainConfig()):
    """Fit ``model`` with Adam on mini-batches; returns ``(model, history)``.

    ``history`` holds one ``(epoch, train_mse, val_mse)`` tuple per epoch.
    Normalization statistics come from the training inputs. The best
    validation-loss weights are kept; training stops after ``patience``
    epochs without improvement.
    """
    if len(data.X_train) == 0:
        raise ContractError("training set is empty")
    model = model.copy()
    history = []
    if config.epochs == 0:
        return model, history
    flat = data.X_train.reshape(-1, data.X_train.shape[-1])
    std = flat.std(axis=0)
    model.set_normalization(flat.mean(axis=0), np.where(std > 1e-8, std, 1.0))
    Xt, Yt = model.normalize(data.X_train), data.Y_train
    has_val = len(data.X_val) > 0
    Xv, Yv = (model.normalize(data.X_val), data.Y_val) if has_val else (Xt, Yt)

    rng = np.random.default_rng(config.seed)
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    best, best_params, stale = math.inf, None, 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(Xt))
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, grads = loss_and_grad(model, Xt[idx], Yt[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
            step += 1
            c1 = 1.0 - config.beta1 ** step
            c2 = 1.0 - config.beta2 ** step
            for k, g in grads.items():
                m[k] = config.beta1 * m[k] + (1 - config.beta1) * g
                v[k] = config.beta2 * v[k] + (1 - config.beta2) * g * g
                model.params[k] -= config.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + config.adam_eps)
        train_loss = mse_loss(model, Xt, Yt)
        val_loss = mse_loss(model, Xv, Yv)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
        history.append((epoch, train_loss, val_loss))
        if val_loss < best:
            best, stale = val_loss, 0
            best_params = {k: p.copy() for k, p in model.params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.params = best_params
    model.ready = True
    return model, history
