"""Small feed-forward network used by the access point.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer is
``a @ W + b``. Everything runs in float64.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "tanh")
LOSSES = ("cross_entropy", "mean_squared_error")
OPTIMIZERS = ("sgd", "adam")

_EPS_PROB = 1e-300


@dataclass(frozen=True)
class ModelConfig:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    dropout_rate: float = 0.0
    loss_kind: str = "cross_entropy"
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError(f"layer_sizes needs input and output sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.loss_kind not in LOSSES:
            raise ValueError(f"unknown loss {self.loss_kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        # zero is accepted so a frozen-model run can be expressed
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be positive")


@dataclass
class ModelState:
    config: ModelConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    optimizer_state: dict = field(default_factory=dict)
    step_count: int = 0

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            copy.deepcopy(self.optimizer_state),
            self.step_count,
        )

    @property
    def n_inputs(self) -> int:
        return self.config.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.config.layer_sizes[-1]

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])


@dataclass
class Gradient:
    """Parameter-shaped gradient, same layout as ``ModelState``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(w * w) + np.sum(b * b) for w, b in zip(self.weights, self.biases))))


def init_model(config: ModelConfig) -> ModelState:
    """Glorot-uniform weights, zero biases, deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelState(config, weights, biases)


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.tanh(z)


def _act_grad(kind, z, a):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(state, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != state.n_inputs:
        raise ValueError(f"batch of shape {X.shape} does not match input size {state.n_inputs}")
    return X


def _dropout_rng(state, rng):
    if rng is not None:
        return rng
    return np.random.default_rng([state.config.seed, state.step_count])


def _forward_pass(state, X, training, rng):
    """Returns (inputs to each layer, hidden pre-activations, dropout masks, logits)."""
    cfg = state.config
    drop = cfg.dropout_rate if training else 0.0
    if drop > 0:
        rng = _dropout_rng(state, rng)
    inputs, preacts, masks = [], [], []
    a = X
    last = len(state.weights) - 1
    for i, (W, b) in enumerate(zip(state.weights, state.biases)):
        inputs.append(a)
        z = a @ W + b
        if i == last:
            return inputs, preacts, masks, z
        preacts.append(z)
        a = _act(cfg.activation, z)
        if drop > 0:
            mask = (rng.random(a.shape) >= drop) / (1.0 - drop)
            a = a * mask
        else:
            mask = None
        masks.append(mask)
    raise AssertionError("unreachable")


def _head(state, logits):
    if state.config.loss_kind == "cross_entropy":
        return softmax(logits)
    return logits


def forward(state: ModelState, batch, training: bool = False, rng=None) -> np.ndarray:
    """Network outputs, one row per sample.

    Cross-entropy models return class probabilities (softmax head); MSE models
    return the raw output layer. Dropout masks are only drawn when ``training``.
    """
    X = _as_batch(state, batch)
    *_, logits = _forward_pass(state, X, training, rng)
    return _head(state, logits)


def predict(state: ModelState, batch) -> np.ndarray:
    return np.argmax(forward(state, batch), axis=1)


def _targets(labels, n_out, kind):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if kind == "cross_entropy":
            raise ValueError("cross-entropy expects class indices")
        if labels.shape[1] != n_out:
            raise ValueError(f"targets have {labels.shape[1]} columns, outputs have {n_out}")
        return labels.astype(np.float64)
    if kind == "mean_squared_error" and n_out == 1:
        return labels.astype(np.float64)[:, None]
    if not np.issubdtype(labels.dtype, np.integer):
        if np.any(labels != np.round(labels)):
            raise ValueError("class labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_out):
        raise ValueError(f"label out of class range [0, {n_out})")
    onehot = np.zeros((labels.shape[0], n_out))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    return onehot


def per_sample_loss(outputs, labels, kind: str = "cross_entropy") -> np.ndarray:
    outputs = np.asarray(outputs, dtype=np.float64)
    if outputs.ndim != 2:
        raise ValueError("outputs must be a 2-D matrix")
    labels = np.asarray(labels)
    if labels.shape[0] != outputs.shape[0]:
        raise ValueError(f"{outputs.shape[0]} output rows but {labels.shape[0]} labels")
    t = _targets(labels, outputs.shape[1], kind)
    if kind == "cross_entropy":
        return -np.log(np.maximum(np.sum(outputs * t, axis=1), _EPS_PROB))
    if kind == "mean_squared_error":
        return np.mean((outputs - t) ** 2, axis=1)
    raise ValueError(f"unknown loss {kind!r}")


def loss(outputs, labels, kind: str = "cross_entropy") -> float:
    """Mean per-sample loss.

    For ``cross_entropy`` the outputs are the probabilities produced by
    :func:`forward`; for ``mean_squared_error`` they are raw outputs compared
    with one-hot (class indices) or explicit real-valued targets.
    """
    return float(np.mean(per_sample_loss(outputs, labels, kind)))


def _output_delta(state, logits, labels):
    """d(per-sample loss)/d(logits), one row per sample (not batch-averaged)."""
    kind = state.config.loss_kind
    t = _targets(labels, state.n_outputs, kind)
    if kind == "cross_entropy":
        return softmax(logits) - t
    return 2.0 * (logits - t) / state.n_outputs


def _backward(state, inputs, preacts, masks, delta):
    """Backpropagate per-sample output deltas; yields (layer, input, delta) pairs from the top."""
    act = state.config.activation
    for i in range(len(state.weights) - 1, -1, -1):
        yield i, inputs[i], delta
        if i == 0:
            return
        d_a = delta @ state.weights[i].T
        if masks[i - 1] is not None:
            d_a = d_a * masks[i - 1]
        z = preacts[i - 1]
        delta = d_a * _act_grad(act, z, _act(act, z))


def gradient(state: ModelState, batch, labels, training: bool = False, rng=None) -> Gradient:
    """Backpropagation gradient of the mean batch loss.

    With ``training=True`` the dropout mask drawn for the forward pass is the
    one used on the way back.
    """
    X = _as_batch(state, batch)
    labels = np.asarray(labels)
    if labels.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} samples but {labels.shape[0]} labels")
    inputs, preacts, masks, logits = _forward_pass(state, X, training, rng)
    delta = _output_delta(state, logits, labels) / X.shape[0]
    gw = [None] * len(state.weights)
    gb = [None] * len(state.weights)
    for i, a, d in _backward(state, inputs, preacts, masks, delta):
        gw[i] = a.T @ d
        gb[i] = d.sum(axis=0)
    return Gradient(gw, gb)


def optimizer_step(state: ModelState, grad: Gradient, config: OptimizerConfig) -> ModelState:
    """One SGD or bias-corrected Adam update. Returns a new state."""
    for w, g in zip(state.weights, grad.weights):
        if w.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match weight shape {w.shape}")
    for b, g in zip(state.biases, grad.biases):
        if b.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match bias shape {b.shape}")
    new = state.copy()
    new.step_count += 1
    lr = config.learning_rate
    params = new.weights + new.biases
    grads = grad.weights + grad.biases
    if config.kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
        return new

    if "m" not in new.optimizer_state:
        new.optimizer_state = {
            "m": [np.zeros_like(p) for p in params],
            "v": [np.zeros_like(p) for p in params],
        }
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    t = new.step_count
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, new.optimizer_state["m"], new.optimizer_state["v"]):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return new


def leverage_score(state: ModelState, sample, label) -> float:
    """2-norm of the per-sample loss gradient over all parameters (dropout off)."""
    X = _as_batch(state, sample)
    if X.shape[0] != 1:
        raise ValueError("leverage_score takes a single sample")
    lab = np.asarray(label)
    # scalar: class index (or scalar target); vector: explicit target row
    lab = lab[None] if lab.ndim == 0 else lab[None, :]
    return gradient(state, X, lab).norm()


def leverage_scores(state: ModelState, batch, labels) -> np.ndarray:
    """Leverage scores for every row of ``batch`` in one backward pass.

    Uses the rank-one structure of a dense layer's per-sample gradient:
    ``||a (x) d||_F^2 = ||a||^2 ||d||^2``.
    """
    X = _as_batch(state, batch)
    labels = np.asarray(labels)
    if labels.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} samples but {labels.shape[0]} labels")
    inputs, preacts, masks, logits = _forward_pass(state, X, False, None)
    delta = _output_delta(state, logits, labels)
    sq = np.zeros(X.shape[0])
    for _, a, d in _backward(state, inputs, preacts, masks, delta):
        dd = np.sum(d * d, axis=1)
        sq += np.sum(a * a, axis=1) * dd + dd
    return np.sqrt(sq)


def error_rate(state: ModelState, X, y) -> float:
    """Fraction of argmax predictions that differ from ``y``."""
    X = np.asarray(X)
    if X.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty set")
    return float(np.mean(predict(state, X) != np.asarray(y)))
