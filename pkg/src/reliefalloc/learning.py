"""Experience storage, value targets, and the two value-function learners.

The linear learner fits one small regression per (epoch, district) pair on
post-decision features. The network learner is a two-hidden-layer ReLU MLP
trained with Adam on full-state features; inputs and targets are
standardized internally and the standardization can be folded back into the
first and last layers so that downstream consumers see a raw-feature,
raw-value network.
"""

from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 10.0


@dataclass(frozen=True)
class Experience:
    """One post-decision observation within an episode."""

    epoch: int
    features_linear: np.ndarray  # (N, 3)
    features_neural: np.ndarray  # (2 + 3N,)
    district_costs: np.ndarray   # (N,) direct costs at this epoch
    episode_id: int


@dataclass
class Episode:
    """A full simulated horizon: features for epochs 0..T-1, costs for 0..T."""

    episode_id: int
    features_linear: np.ndarray  # (T, N, 3)
    features_neural: np.ndarray  # (T, 2 + 3N)
    district_costs: np.ndarray   # (T + 1, N)
    _targets_cache: dict = field(default_factory=dict, repr=False)

    @property
    def horizon(self) -> int:
        return self.features_linear.shape[0]

    @property
    def num_districts(self) -> int:
        return self.features_linear.shape[1]

    @property
    def total_cost(self) -> float:
        return float(self.district_costs.sum())

    def records(self) -> Iterator[Experience]:
        for t in range(self.horizon):
            yield Experience(t, self.features_linear[t], self.features_neural[t],
                             self.district_costs[t], self.episode_id)


class ExperienceBuffer:
    """FIFO ring of episodes with a fixed capacity; oldest evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._episodes: deque[Episode] = deque(maxlen=capacity)

    def append(self, episode: Episode):
        self._episodes.append(episode)

    def episodes(self) -> list[Episode]:
        return list(self._episodes)

    def __len__(self) -> int:
        return len(self._episodes)


def value_targets(episode: Episode, discount: float) -> np.ndarray:
    """Realized discounted future district costs per epoch.

    The target for the post-decision state at t covers costs from t+1
    onward: V[T-1] is the terminal cost and V[t] = C[t+1] + discount * V[t+1].
    """
    key = float(discount)
    if key in episode._targets_cache:
        return episode._targets_cache[key]
    T = episode.horizon
    costs = episode.district_costs
    if costs.shape[0] != T + 1:
        raise ValueError("incomplete episode: need costs for epochs 0..T")
    targets = np.zeros((T, costs.shape[1]))
    targets[T - 1] = costs[T]
    for t in range(T - 2, -1, -1):
        targets[t] = costs[t + 1] + discount * targets[t + 1]
    targets.setflags(write=False)
    episode._targets_cache[key] = targets
    return targets


def filter_outliers(episodes: Sequence[Episode] | ExperienceBuffer) -> list[Episode]:
    """Drop episodes whose total cost exceeds Q3 + 1.5 IQR; returns a view.

    Quartiles use linear interpolation between order statistics. Fewer than
    four episodes are returned unfiltered.
    """
    if isinstance(episodes, ExperienceBuffer):
        episodes = episodes.episodes()
    episodes = list(episodes)
    if len(episodes) < 4:
        return episodes
    totals = np.array([ep.total_cost for ep in episodes])
    q1, q3 = np.percentile(totals, [25.0, 75.0])
    cutoff = q3 + 1.5 * (q3 - q1)
    return [ep for ep, tot in zip(episodes, totals) if tot <= cutoff]


def fit_linear(features: np.ndarray, targets: np.ndarray, ridge: float = 1e-6) -> np.ndarray:
    """Ridge-regularized least squares of targets on [1, features]."""
    X = np.column_stack([np.ones(len(features)), np.asarray(features, dtype=np.float64)])
    y = np.asarray(targets, dtype=np.float64)
    gram = X.T @ X + ridge * np.eye(X.shape[1])
    return np.linalg.solve(gram, X.T @ y)


def smooth_weights(old: np.ndarray, new: np.ndarray, alpha: float) -> np.ndarray:
    old = np.asarray(old, dtype=np.float64)
    new = np.asarray(new, dtype=np.float64)
    if old.shape != new.shape:
        raise ValueError(f"shape mismatch: {old.shape} vs {new.shape}")
    return (1.0 - alpha) * old + alpha * new


@dataclass
class LinearVFA:
    """One linear value function per (epoch, district): weights (T, N, 4)."""

    weights: np.ndarray  # [intercept, inventory, deprivation time, expected deprivation]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 3 or self.weights.shape[2] != 4:
            raise ValueError("weights must have shape (T, N, 4)")

    @property
    def horizon(self) -> int:
        return self.weights.shape[0]

    @property
    def num_districts(self) -> int:
        return self.weights.shape[1]

    def predict(self, epoch: int, features_linear: np.ndarray) -> np.ndarray:
        """Per-district predicted future costs for post-decision features."""
        w = self.weights[epoch]
        return w[:, 0] + np.einsum("nf,nf->n", w[:, 1:], np.asarray(features_linear, dtype=np.float64))

    @classmethod
    def zeros(cls, horizon: int, num_districts: int) -> "LinearVFA":
        return cls(np.zeros((horizon, num_districts, 4)))


class MlpVFA:
    """Two-hidden-layer ReLU network with a scalar linear head.

    Stores input standardization (x_mean, x_std) and target scaling
    (y_mean, y_std); forward() accepts raw features and returns raw values.
    """

    def __init__(self, w1, b1, w2, b2, w3, b3,
                 x_mean=None, x_std=None, y_mean=0.0, y_std=1.0):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.w3 = np.asarray(w3, dtype=np.float64)
        self.b3 = np.asarray(b3, dtype=np.float64)
        dim = self.w1.shape[1]
        self.x_mean = np.zeros(dim) if x_mean is None else np.asarray(x_mean, dtype=np.float64)
        self.x_std = np.ones(dim) if x_std is None else np.asarray(x_std, dtype=np.float64)
        self.y_mean = float(y_mean)
        self.y_std = float(y_std)
        if self.w3.shape[0] != 1:
            raise ValueError("output layer must be scalar")
        if np.any(self.x_std <= 0) or self.y_std <= 0:
            raise ValueError("standardization scales must be positive")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dims(self) -> tuple[int, int]:
        return (self.w1.shape[0], self.w2.shape[0])

    @classmethod
    def initialize(cls, input_dim: int, hidden: tuple[int, int] = (16, 16),
                   rng: np.random.Generator | None = None) -> "MlpVFA":
        rng = rng or np.random.default_rng(0)
        h1, h2 = hidden
        return cls(
            w1=rng.normal(0.0, np.sqrt(2.0 / input_dim), (h1, input_dim)),
            b1=np.zeros(h1),
            w2=rng.normal(0.0, np.sqrt(2.0 / h1), (h2, h1)),
            b2=np.zeros(h2),
            w3=rng.normal(0.0, np.sqrt(1.0 / h2), (1, h2)),
            b3=np.zeros(1),
        )

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)

    def forward(self, features) -> np.ndarray | float:
        """Raw features in, raw predicted future cost out."""
        phi = np.atleast_2d(np.asarray(features, dtype=np.float64))
        z = (phi - self.x_mean) / self.x_std
        h1 = np.maximum(0.0, z @ self.w1.T + self.b1)
        h2 = np.maximum(0.0, h1 @ self.w2.T + self.b2)
        out = (h2 @ self.w3.T + self.b3)[:, 0] * self.y_std + self.y_mean
        return out if np.asarray(features).ndim > 1 else float(out[0])

    def folded_layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Weights with all standardization folded in: raw features -> raw value."""
        scale = self.x_mean / self.x_std
        w1 = self.w1 / self.x_std[np.newaxis, :]
        b1 = self.b1 - self.w1 @ scale
        w3 = self.w3 * self.y_std
        b3 = self.b3 * self.y_std + self.y_mean
        return [(w1, b1), (self.w2.copy(), self.b2.copy()), (w3, b3)]

    def set_standardization(self, x_mean, x_std, y_mean, y_std):
        self.x_mean = np.asarray(x_mean, dtype=np.float64)
        self.x_std = np.maximum(np.asarray(x_std, dtype=np.float64), 1e-8)
        self.y_mean = float(y_mean)
        self.y_std = max(float(y_std), 1e-8)


def mlp_forward(network: MlpVFA, features) -> float | np.ndarray:
    """Evaluate the network on raw features."""
    return network.forward(features)


def mlp_loss_and_grads(params, X: np.ndarray, y: np.ndarray):
    """Mean-squared-error loss and parameter gradients (pure function).

    Operates in whatever space X and y are given in; callers standardize.
    """
    w1, b1, w2, b2, w3, b3 = params
    m = X.shape[0]
    a1 = X @ w1.T + b1
    h1 = np.maximum(0.0, a1)
    a2 = h1 @ w2.T + b2
    h2 = np.maximum(0.0, a2)
    out = (h2 @ w3.T + b3)[:, 0]
    err = out - y
    loss = float(np.mean(err ** 2))

    dout = (2.0 / m) * err
    g_w3 = dout @ h2
    g_b3 = np.array([dout.sum()])
    dh2 = np.outer(dout, w3[0])
    da2 = dh2 * (a2 > 0)
    g_w2 = da2.T @ h1
    g_b2 = da2.sum(axis=0)
    dh1 = da2 @ w2
    da1 = dh1 * (a1 > 0)
    g_w1 = da1.T @ X
    g_b1 = da1.sum(axis=0)
    return loss, (g_w1, g_b1, g_w2, g_b2, g_w3[np.newaxis, :], g_b3)


class MlpTrainer:
    """Adam optimizer state bound to a network; trains on raw batches."""

    def __init__(self, network: MlpVFA, learning_rate: float = 0.001,
                 clip_norm: float = GRAD_CLIP_NORM):
        self.network = network
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.step_count = 0
        self._m = [np.zeros_like(p) for p in network.params()]
        self._v = [np.zeros_like(p) for p in network.params()]

    def train_step(self, features: np.ndarray, targets: np.ndarray) -> float:
        """One Adam step on a raw mini-batch; returns the standardized MSE.

        Non-finite losses abort the update (the network is left unchanged).
        """
        net = self.network
        Xs = (np.asarray(features, dtype=np.float64) - net.x_mean) / net.x_std
        ys = (np.asarray(targets, dtype=np.float64) - net.y_mean) / net.y_std
        with np.errstate(invalid="ignore", over="ignore"):
            loss, grads = mlp_loss_and_grads(net.params(), Xs, ys)
        if not np.isfinite(loss):
            return loss
        total = np.sqrt(sum(float((g ** 2).sum()) for g in grads))
        if total > self.clip_norm:
            grads = [g * (self.clip_norm / total) for g in grads]
        self.step_count += 1
        t = self.step_count
        params = list(net.params())
        for i, (p, g) in enumerate(zip(params, grads)):
            self._m[i] = ADAM_BETA1 * self._m[i] + (1 - ADAM_BETA1) * g
            self._v[i] = ADAM_BETA2 * self._v[i] + (1 - ADAM_BETA2) * g ** 2
            m_hat = self._m[i] / (1 - ADAM_BETA1 ** t)
            v_hat = self._v[i] / (1 - ADAM_BETA2 ** t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        return loss


def mlp_train_step(network: MlpVFA, features, targets, learning_rate: float = 0.001,
                   trainer: MlpTrainer | None = None) -> tuple[MlpVFA, float]:
    """Single training step; creates a throwaway Adam state if none is given."""
    trainer = trainer or MlpTrainer(network, learning_rate)
    loss = trainer.train_step(np.asarray(features), np.asarray(targets))
    return trainer.network, loss


@dataclass
class TrainingConfig:
    """Hyperparameters for the value-function training loops."""

    discount: float = 0.9
    epsilon0: float = 0.2
    epsilon_decay: float = 0.98
    alpha0: float = 0.2
    alpha_decay: float = 0.99
    buffer_size: int = 1000
    update_every: int = 10
    learning_rate: float = 0.001
    batch_size: int = 256
    episodes: int = 3000
    time_cap_s: float = 14400.0
    hidden: tuple[int, int] = (16, 16)
    pretrain_passes: int = 100
    ridge: float = 1e-6
    eval_paths: int = 10

    def __post_init__(self):
        if not 0 < self.discount <= 1:
            raise ValueError("discount must be in (0, 1]")
        for name in ("epsilon0", "alpha0"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")


CHECKPOINT_VERSION = 1


def save_checkpoint(vfa: LinearVFA | MlpVFA, path: str, meta: dict | None = None):
    """Write a value function to a versioned JSON checkpoint."""
    doc = {"version": CHECKPOINT_VERSION, "meta": meta or {}}
    if isinstance(vfa, LinearVFA):
        doc["kind"] = "linear"
        doc["weights"] = vfa.weights.tolist()
    elif isinstance(vfa, MlpVFA):
        doc["kind"] = "mlp"
        doc["layers"] = {k: getattr(vfa, k).tolist()
                         for k in ("w1", "b1", "w2", "b2", "w3", "b3")}
        doc["x_mean"] = vfa.x_mean.tolist()
        doc["x_std"] = vfa.x_std.tolist()
        doc["y_mean"] = vfa.y_mean
        doc["y_std"] = vfa.y_std
    else:
        raise TypeError(f"cannot checkpoint {type(vfa).__name__}")
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[LinearVFA | MlpVFA, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    meta = doc.get("meta", {})
    if doc["kind"] == "linear":
        return LinearVFA(np.array(doc["weights"])), meta
    if doc["kind"] == "mlp":
        layers = doc["layers"]
        return MlpVFA(
            w1=np.array(layers["w1"]), b1=np.array(layers["b1"]),
            w2=np.array(layers["w2"]), b2=np.array(layers["b2"]),
            w3=np.array(layers["w3"]), b3=np.array(layers["b3"]),
            x_mean=np.array(doc["x_mean"]), x_std=np.array(doc["x_std"]),
            y_mean=doc["y_mean"], y_std=doc["y_std"]), meta
    raise ValueError(f"unknown checkpoint kind {doc['kind']!r}")
