"""Two-layer rectifier network whose decision region is a polytope.

The network scores a constraint-feature vector ``psi`` as

    f(psi) = 1 - sum_k max(0, w_k . psi + b_k)

and predicts +1 (feasible) when ``f >= 0``. Only the hidden layer is
trained; the output layer is fixed. During training the sign is replaced
by a sigmoid and the network is fit with binary cross-entropy.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

FORMAT_VERSION = 1


class DimensionError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstraintNet:
    weights: np.ndarray  # (K, d)
    biases: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        b = np.array(self.biases, dtype=float, copy=True)
        if w.ndim != 2:
            raise DimensionError(f"weights must be a K x d matrix, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise DimensionError(
                f"expected {w.shape[0]} biases for {w.shape[0]} hidden units, got shape {b.shape}")
        if w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionError(f"empty network shape {w.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("network parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def hidden_count(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, hidden_count: int, input_dim: int) -> "ConstraintNet":
        return cls(np.zeros((hidden_count, input_dim)), np.zeros(hidden_count))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.weights.tobytes())
        h.update(self.biases.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class LabeledFeatureExample:
    psi: np.ndarray
    label: int

    def __post_init__(self):
        if self.label not in (1, -1):
            raise ValueError(f"label must be +1 or -1, got {self.label!r}")
        psi = np.asarray(self.psi, dtype=float)
        if psi.ndim != 1:
            raise DimensionError(f"psi must be a vector, got shape {psi.shape}")
        object.__setattr__(self, "psi", psi)

    def key(self) -> tuple:
        return tuple(self.psi.tolist())


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    lr_decay: float = 0.0
    epochs: int = 1000
    moment1: float = 0.9
    moment2: float = 0.999
    epsilon_stab: float = 1e-7
    seed: int = 0
    batch_size: int | None = None  # None means full batch

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_decay < 0:
            raise ValueError("lr_decay must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not (0 < self.moment1 < 1 and 0 < self.moment2 < 1):
            raise ValueError("moment coefficients must lie in (0, 1)")
        if not self.epsilon_stab > 0:
            raise ValueError("epsilon_stab must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


LEARNING_RATE_GRID = (0.001, 0.01, 0.1)
LR_DECAY_GRID = (0.0, 1e-7, 1e-6)


def _check_psi(net, psi):
    psi = np.asarray(psi, dtype=float)
    if psi.shape[-1] != net.input_dim:
        raise DimensionError(f"expected psi of dimension {net.input_dim}, got {psi.shape[-1]}")
    return psi


def hidden_activations(net: ConstraintNet, psi) -> np.ndarray:
    """Pre-ReLU activations ``w_k . psi + b_k``; works on a vector or a (N, d) batch."""
    psi = _check_psi(net, psi)
    return psi @ net.weights.T + net.biases


def forward_raw(net: ConstraintNet, psi) -> float | np.ndarray:
    a = hidden_activations(net, psi)
    out = 1.0 - np.maximum(a, 0.0).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def predict(net: ConstraintNet, psi) -> int | np.ndarray:
    f = forward_raw(net, psi)
    if np.ndim(f) == 0:
        return 1 if f >= 0 else -1
    return np.where(f >= 0, 1, -1)


def _stack(batch, input_dim=None):
    if len(batch) == 0:
        raise ValueError("empty batch")
    dims = {len(ex.psi) for ex in batch}
    if len(dims) != 1:
        raise DimensionError(f"inconsistent psi dimensions in batch: {sorted(dims)}")
    if input_dim is not None and dims != {input_dim}:
        raise DimensionError(f"expected psi of dimension {input_dim}, got {dims.pop()}")
    X = np.stack([ex.psi for ex in batch])
    y = np.array([ex.label for ex in batch], dtype=float)
    return X, y


def _loss_grad_arrays(W, b, X, t):
    a = X @ W.T + b
    active = a > 0
    f = 1.0 - np.where(active, a, 0.0).sum(axis=1)
    # softplus(f) - t*f is cross-entropy of sigmoid(f) against t
    loss = float(np.mean(np.logaddexp(0.0, f) - t * f))
    g = (expit(f) - t) / len(t)  # dloss/df per example
    # df/da_k = -1 on active units
    ga = -g[:, None] * active
    return loss, ga.T @ X, ga.sum(axis=0)


def loss_and_grad(net: ConstraintNet, batch):
    """Mean sigmoid cross-entropy over ``batch`` and its gradient.

    Returns ``(loss, grad_weights, grad_biases)``. The ReLU subgradient at
    exactly zero is taken as zero.
    """
    X, y = _stack(batch, net.input_dim)
    return _loss_grad_arrays(net.weights, net.biases, X, (y + 1.0) / 2.0)


def init_net(input_dim: int, hidden_count: int, rng: np.random.Generator) -> ConstraintNet:
    bound = 1.0 / math.sqrt(input_dim)
    return ConstraintNet(rng.uniform(-bound, bound, size=(hidden_count, input_dim)),
                         np.zeros(hidden_count))


def train(input_dim: int, hidden_count: int, data, config: TrainConfig | None = None):
    """Fit a rectifier network with Adam on sigmoid cross-entropy.

    Returns the trained net and the per-epoch mean training loss.
    """
    config = config or TrainConfig()
    if hidden_count < 1:
        raise ValueError("hidden_count must be at least 1")
    X, y = _stack(data, input_dim)
    if not (np.any(y > 0) and np.any(y < 0)):
        raise TrainingError("degenerate training set: need both positive and negative examples")
    t = (y + 1.0) / 2.0

    rng = np.random.default_rng(config.seed)
    net = init_net(input_dim, hidden_count, rng)
    W, b = net.weights.copy(), net.biases.copy()
    mW, vW = np.zeros_like(W), np.zeros_like(W)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    b1, b2, eps = config.moment1, config.moment2, config.epsilon_stab
    n = len(t)
    bs = n if config.batch_size is None else min(config.batch_size, n)

    history = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n) if bs < n else None
        total = 0.0
        for start in range(0, n, bs):
            if order is None:
                Xb, tb = X, t
            else:
                idx = order[start:start + bs]
                Xb, tb = X[idx], t[idx]
            loss, gW, gb = _loss_grad_arrays(W, b, Xb, tb)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            total += loss * len(tb)
            lr = config.learning_rate / (1.0 + config.lr_decay * step)
            step += 1
            mW = b1 * mW + (1 - b1) * gW
            vW = b2 * vW + (1 - b2) * gW * gW
            mb = b1 * mb + (1 - b1) * gb
            vb = b2 * vb + (1 - b2) * gb * gb
            corr = math.sqrt(1 - b2 ** step) / (1 - b1 ** step)
            W -= lr * corr * mW / (np.sqrt(vW) + eps)
            b -= lr * corr * mb / (np.sqrt(vb) + eps)
        history.append(total / n)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise TrainingError(f"non-finite parameters after epoch {config.epochs - 1}")
    return ConstraintNet(W, b), history


def classification_accuracy(net: ConstraintNet, data) -> float:
    X, y = _stack(data, net.input_dim)
    return float(np.mean(predict(net, X) == y))


def split_examples(data, held_out_fraction: float, rng: np.random.Generator):
    order = rng.permutation(len(data))
    cut = len(data) - int(round(held_out_fraction * len(data)))
    return [data[i] for i in order[:cut]], [data[i] for i in order[cut:]]


@dataclass
class SelectionResult:
    net: ConstraintNet
    config: TrainConfig
    history: list
    scores: dict = field(default_factory=dict)  # (lr, decay) -> held-out accuracy


def select_and_train(input_dim: int, hidden_count: int, data, *, seed: int, epochs: int = 1000,
                     learning_rates=LEARNING_RATE_GRID, decays=LR_DECAY_GRID,
                     held_out_fraction: float = 0.2) -> SelectionResult:
    """Grid search over learning rate and decay, then retrain on all of ``data``.

    Each grid point is trained on a seeded 80/20 split and scored by held-out
    classification accuracy; ties go to the earlier grid point.
    """
    rng = np.random.default_rng(seed)
    pos = [ex for ex in data if ex.label > 0]
    neg = [ex for ex in data if ex.label < 0]
    # stratified so both sides of the split keep both classes
    p_tr, p_ho = split_examples(pos, held_out_fraction, rng)
    n_tr, n_ho = split_examples(neg, held_out_fraction, rng)
    fit, held = p_tr + n_tr, p_ho + n_ho
    if not p_tr or not n_tr or not held:
        fit = held = list(data)

    best, scores = None, {}
    for lr in learning_rates:
        for decay in decays:
            cfg = TrainConfig(learning_rate=lr, lr_decay=decay, epochs=epochs, seed=seed)
            net, _ = train(input_dim, hidden_count, fit, cfg)
            acc = classification_accuracy(net, held)
            scores[(lr, decay)] = acc
            if best is None or acc > best[0]:
                best = (acc, cfg)
    cfg = best[1]
    net, history = train(input_dim, hidden_count, data, cfg)
    return SelectionResult(net, cfg, history, scores)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def dumps_net(net: ConstraintNet, **meta) -> str:
    """Serialize to JSON text; floats are written with 17 significant digits."""
    doc = {
        "format_version": FORMAT_VERSION,
        "hidden_count": net.hidden_count,
        "input_dim": net.input_dim,
        "weights": "@W@",
        "biases": "@B@",
    }
    doc.update(meta)
    text = json.dumps(doc, indent=1, sort_keys=False)
    w = "[" + ", ".join(_fmt(x) for x in net.weights.ravel()) + "]"
    bb = "[" + ", ".join(_fmt(x) for x in net.biases) + "]"
    return text.replace('"@W@"', w).replace('"@B@"', bb) + "\n"


def loads_net(text: str) -> tuple[ConstraintNet, dict]:
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported net format_version {doc.get('format_version')!r}")
    K, d = int(doc["hidden_count"]), int(doc["input_dim"])
    w = np.asarray(doc["weights"], dtype=float)
    if w.size != K * d:
        raise DimensionError(f"expected {K * d} weights, got {w.size}")
    net = ConstraintNet(w.reshape(K, d), np.asarray(doc["biases"], dtype=float))
    meta = {k: v for k, v in doc.items()
            if k not in ("format_version", "hidden_count", "input_dim", "weights", "biases")}
    return net, meta
