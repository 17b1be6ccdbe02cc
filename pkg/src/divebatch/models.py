"""Models with exact analytic per-sample losses and gradients.

Three families: logistic regression (convex), a two-layer MLP (nonconvex),
and a mean-anchored quadratic whose optimum and convergence constants are
known in closed form.  Classification losses are binary cross-entropy on
logits, evaluated in the stable log-sum-exp form.  Every family flattens its
parameters to a single vector with a fixed layout, and gradient aggregates
are returned as (sum of per-sample gradients, sum of squared norms, count).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("relu", "tanh")


@dataclass
class GradStats:
    """Aggregates of per-sample gradients over one batch."""

    grad_sum: np.ndarray
    sq_norm_sum: float
    count: int


def _row_sq_norms(X: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", X, X)


def _as_batch(x, y):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 0:
        y = y[None]
    return x, y


def _bce_with_logits(scores: np.ndarray, y: np.ndarray) -> np.ndarray:
    # log(1 + e^s) - y*s, stable for large |s|
    return np.logaddexp(0.0, scores) - y * scores


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float

    family = "logistic"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = float(self.bias)

    @classmethod
    def zeros(cls, d: int) -> "LogisticModel":
        return cls(np.zeros(d), 0.0)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.dim + 1

    def _check(self, X):
        if X.shape[1] != self.dim:
            raise ValueError(f"sample dimension {X.shape[1]} does not match model d={self.dim}")

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        self._check(X)
        return X @ self.weights + self.bias

    def loss_per_sample(self, X, y) -> np.ndarray:
        X, y = _as_batch(X, y)
        return _bce_with_logits(self.decision_scores(X), y)

    def grad_stats(self, X, y) -> GradStats:
        X, y = _as_batch(X, y)
        r = expit(self.decision_scores(X)) - y
        grad = np.concatenate([X.T @ r, [r.sum()]])
        sq = float(np.dot(r * r, _row_sq_norms(X) + 1.0))
        return GradStats(grad, sq, X.shape[0])

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.weights, [self.bias]])

    def from_flat(self, flat: np.ndarray) -> "LogisticModel":
        return LogisticModel(flat[:-1].copy(), float(flat[-1]))


@dataclass
class MlpModel:
    """One hidden layer, scalar output logit.

    Flat layout: w1 row-major, b1, w2, b2.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    activation: str = "relu"

    family = "mlp"

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = float(self.b2)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")

    @classmethod
    def init_random(cls, d: int, hidden: int, rng: np.random.Generator, activation: str = "relu"):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer."""
        lim1 = 1.0 / np.sqrt(d)
        lim2 = 1.0 / np.sqrt(hidden)
        return cls(
            rng.uniform(-lim1, lim1, size=(hidden, d)),
            rng.uniform(-lim1, lim1, size=hidden),
            rng.uniform(-lim2, lim2, size=hidden),
            float(rng.uniform(-lim2, lim2)),
            activation,
        )

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_params(self) -> int:
        h, d = self.w1.shape
        return h * d + h + h + 1

    def _check(self, X):
        if X.shape[1] != self.dim:
            raise ValueError(f"sample dimension {X.shape[1]} does not match model d={self.dim}")

    def _act(self, Z):
        if self.activation == "relu":
            return np.maximum(Z, 0.0)
        return np.tanh(Z)

    def _act_deriv(self, Z):
        if self.activation == "relu":
            return (Z > 0.0).astype(np.float64)
        t = np.tanh(Z)
        return 1.0 - t * t

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        self._check(X)
        return self._act(X @ self.w1.T + self.b1) @ self.w2 + self.b2

    def loss_per_sample(self, X, y) -> np.ndarray:
        X, y = _as_batch(X, y)
        return _bce_with_logits(self.decision_scores(X), y)

    def grad_stats(self, X, y) -> GradStats:
        X, y = _as_batch(X, y)
        self._check(X)
        pre = X @ self.w1.T + self.b1
        hidden = self._act(pre)
        r = expit(hidden @ self.w2 + self.b2) - y
        delta = (r[:, None] * self.w2[None, :]) * self._act_deriv(pre)
        grad = np.concatenate([(delta.T @ X).ravel(), delta.sum(axis=0), hidden.T @ r, [r.sum()]])
        # ||outer(delta_i, x_i)||_F^2 = ||delta_i||^2 ||x_i||^2, similarly for layer 2
        sq = float(
            np.dot(_row_sq_norms(delta), _row_sq_norms(X) + 1.0)
            + np.dot(r * r, _row_sq_norms(hidden) + 1.0)
        )
        return GradStats(grad, sq, X.shape[0])

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def from_flat(self, flat: np.ndarray) -> "MlpModel":
        h, d = self.w1.shape
        k = h * d
        return MlpModel(
            flat[:k].reshape(h, d).copy(),
            flat[k : k + h].copy(),
            flat[k + h : k + 2 * h].copy(),
            float(flat[-1]),
            self.activation,
        )


@dataclass
class QuadraticModel:
    """Per-sample loss 0.5 * ||theta - z||^2 over anchor points z; optimum is the anchor mean."""

    theta: np.ndarray

    family = "quadratic"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)

    @classmethod
    def zeros(cls, d: int) -> "QuadraticModel":
        return cls(np.zeros(d))

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    @property
    def n_params(self) -> int:
        return self.dim

    def _check(self, X):
        if X.shape[1] != self.dim:
            raise ValueError(f"sample dimension {X.shape[1]} does not match model d={self.dim}")

    def loss_per_sample(self, X, y=None) -> np.ndarray:
        X, _ = _as_batch(X, 0.0)
        self._check(X)
        return 0.5 * _row_sq_norms(self.theta[None, :] - X)

    def grad_stats(self, X, y=None) -> GradStats:
        X, _ = _as_batch(X, 0.0)
        self._check(X)
        diffs = self.theta[None, :] - X
        return GradStats(diffs.sum(axis=0), float(_row_sq_norms(diffs).sum()), X.shape[0])

    def to_flat(self) -> np.ndarray:
        return self.theta.copy()

    def from_flat(self, flat: np.ndarray) -> "QuadraticModel":
        return QuadraticModel(flat.copy())


Model = LogisticModel | MlpModel | QuadraticModel


def per_sample_loss(model, x, y) -> float:
    return float(model.loss_per_sample(x, y)[0])


def per_sample_grad(model, x, y) -> np.ndarray:
    return model.grad_stats(x, y).grad_sum


def batch_grad_stats(model, dataset, indices) -> GradStats:
    """Gradient aggregates over ``dataset`` rows; accumulation in ascending index order."""
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    if idx.size == 0:
        raise ValueError("empty index list")
    X = dataset.features[idx]
    y = dataset.labels[idx].astype(np.float64)
    return model.grad_stats(X, y)


def evaluate(model, dataset, indices) -> tuple[float, float]:
    """Mean loss and accuracy over the given rows.

    Accuracy is NaN for the quadratic family (no classification semantics).
    Prediction is 1 iff the logit is strictly positive, so an exact tie at
    probability 0.5 predicts label 0.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty index list")
    X = dataset.features[idx]
    y = dataset.labels[idx].astype(np.float64)
    mean_loss = float(model.loss_per_sample(X, y).mean())
    if model.family == "quadratic":
        return mean_loss, float("nan")
    predicted = (model.decision_scores(X) > 0.0).astype(np.float64)
    return mean_loss, float((predicted == y).mean())


def save_checkpoint(model, path) -> None:
    """Flat parameter vector with a family/shape header, lossless text floats."""
    path = Path(path)
    if model.family == "logistic":
        header = f"logistic d={model.dim}"
    elif model.family == "mlp":
        header = f"mlp d={model.dim} hidden={model.hidden} activation={model.activation}"
    else:
        header = f"quadratic d={model.dim}"
    lines = [header] + [repr(float(v)) for v in model.to_flat()]
    path.write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty checkpoint")
    fields = lines[0].split()
    family = fields[0]
    kv = dict(item.split("=", 1) for item in fields[1:])
    flat = np.asarray([float(v) for v in lines[1:]], dtype=np.float64)
    if family == "logistic":
        template = LogisticModel.zeros(int(kv["d"]))
    elif family == "mlp":
        d, h = int(kv["d"]), int(kv["hidden"])
        template = MlpModel(np.zeros((h, d)), np.zeros(h), np.zeros(h), 0.0, kv["activation"])
    elif family == "quadratic":
        template = QuadraticModel.zeros(int(kv["d"]))
    else:
        raise ValueError(f"{path}: unknown model family {family!r}")
    if flat.shape[0] != template.n_params:
        raise ValueError(f"{path}: expected {template.n_params} parameters, found {flat.shape[0]}")
    return template.from_flat(flat)
