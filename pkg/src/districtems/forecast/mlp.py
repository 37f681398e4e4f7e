"""Multi-layer perceptron regressor: tanh hidden layers, linear output, SGD with momentum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class MlpConfig:
    hidden: tuple[int, ...] = (8,)
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    scale_inputs: bool = True
    scale_target: bool = True


@dataclass
class MlpRegressor:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mu: np.ndarray
    x_sd: np.ndarray
    y_mu: np.ndarray
    y_sd: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def to_dict(self) -> dict:
        return {"kind": "mlp", "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases], "x_mu": self.x_mu.tolist(),
                "x_sd": self.x_sd.tolist(), "y_mu": self.y_mu.tolist(), "y_sd": self.y_sd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpRegressor":
        return cls([np.array(w, dtype=float).reshape(len(w), -1) for w in d["weights"]],
                   [np.array(b, dtype=float) for b in d["biases"]],
                   *(np.array(d[k], dtype=float) for k in ("x_mu", "x_sd", "y_mu", "y_sd")))


def mlp_init(sizes: list[int], seed: int = 0) -> MlpRegressor:
    rng = np.random.default_rng(seed)
    W, b = [], []
    for a, c in zip(sizes[:-1], sizes[1:]):
        W.append(rng.normal(0.0, np.sqrt(1.0 / a), (a, c)))
        b.append(np.zeros(c))
    return MlpRegressor(W, b, np.zeros(sizes[0]), np.ones(sizes[0]), np.zeros(sizes[-1]), np.ones(sizes[-1]))


def _forward(model: MlpRegressor, Z: np.ndarray):
    """Activations per layer in scaled space; the last entry is the linear output."""
    acts = [Z]
    h = Z
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = h @ W + b
        h = a if l == last else np.tanh(a)
        acts.append(h)
    return acts


def _as_2d(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y[:, None] if y.ndim == 1 else y


def mlp_predict(model: MlpRegressor, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = _forward(model, (X - model.x_mu) / model.x_sd)[-1] * model.y_sd + model.y_mu
    return out[:, 0] if out.shape[1] == 1 else out


def mlp_loss(model: MlpRegressor, X, y) -> float:
    """Half mean squared error over samples (summed over outputs), in target units."""
    pred = mlp_predict(model, X)
    err = _as_2d(pred) - _as_2d(y)
    return float(0.5 * np.mean(np.sum(err * err, axis=1)))


def mlp_gradient(model: MlpRegressor, X, y):
    """Backpropagated gradients of :func:`mlp_loss`; returns ``(dW list, db list)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = _as_2d(y)
    acts = _forward(model, (X - model.x_mu) / model.x_sd)
    n = X.shape[0]
    pred = acts[-1] * model.y_sd + model.y_mu
    delta = (pred - Y) * model.y_sd / n  # d loss / d (scaled output)
    dW = [None] * len(model.weights)
    db = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        dW[l] = acts[l].T @ delta
        db[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (1.0 - acts[l] ** 2)
    return dW, db


def mlp_fit(X, y, cfg: MlpConfig | None = None) -> MlpRegressor:
    cfg = cfg or MlpConfig()
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = _as_2d(y)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("training data must be finite")
    n = X.shape[0]
    model = mlp_init([X.shape[1], *cfg.hidden, Y.shape[1]], cfg.seed)
    if cfg.scale_inputs:
        model.x_mu = X.mean(axis=0)
        sd = X.std(axis=0)
        model.x_sd = np.where(sd > 0, sd, 1.0)
    if cfg.scale_target:
        model.y_mu = Y.mean(axis=0)
        sd = Y.std(axis=0)
        model.y_sd = np.where(sd > 0, sd, 1.0)
    rng = np.random.default_rng(cfg.seed + 1)
    vel_W = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            Xb, Yb = X[batch], Y[batch]
            dW, db = mlp_gradient(model, Xb, Yb)
            scale = 1.0 / (model.y_sd ** 2).mean()  # steps measured in scaled-target units
            for l in range(len(model.weights)):
                vel_W[l] = cfg.momentum * vel_W[l] - cfg.lr * scale * dW[l]
                vel_b[l] = cfg.momentum * vel_b[l] - cfg.lr * scale * db[l]
                model.weights[l] += vel_W[l]
                model.biases[l] += vel_b[l]
            total += mlp_loss(model, Xb, Yb) * len(batch)
        avg = total / n
        if not np.isfinite(avg):
            big = max(float(np.max(np.abs(w))) if np.all(np.isfinite(w)) else np.inf for w in model.weights)
            raise TrainingDivergedError(
                f"loss became {avg} at epoch {epoch + 1} (lr={cfg.lr}, momentum={cfg.momentum}, max |w|={big})")
        model.loss_history.append(avg)
    return model
