"""Node-side importance filter.

Each node keeps the P most recent (sample, leverage score) pairs fed back
by the access point, estimates the score of a fresh sample as the mean over
its L nearest stored samples, and transmits with a softmax-weighted
probability calibrated to the target rate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .energy import EnergyLedger, EnergyParams


@dataclass(frozen=True)
class ScoredEntry:
    sample: np.ndarray
    score: float

    def __post_init__(self):
        if not self.score >= 0:
            raise ValueError(f"leverage score must be non-negative, got {self.score}")


@dataclass(frozen=True)
class FilterConfig:
    buffer_size: int = 16
    neighbors: int = 3
    beta_min: float = 0.0
    beta_max: float = 1.0
    anneal_intervals: int = 10
    target_rate: float = 0.3

    def __post_init__(self):
        P, L = self.buffer_size, self.neighbors
        if P < 2 or L < 1:
            raise ValueError(f"need buffer_size >= 2 and neighbors >= 1, got P={P}, L={L}")
        if L >= P:
            raise ValueError(f"neighbors must be smaller than buffer_size (L={L}, P={P})")
        if self.beta_min > self.beta_max:
            raise ValueError("beta_min must not exceed beta_max")
        if self.anneal_intervals < 1:
            raise ValueError("anneal_intervals must be positive")
        if not 0 < self.target_rate <= 1:
            raise ValueError(f"target_rate must lie in (0, 1], got {self.target_rate}")
        if L < math.ceil(math.log(P)):
            warnings.warn(f"neighbors={L} < ceil(ln {P}); the estimation bound does not apply",
                          stacklevel=3)


@dataclass
class NodeState:
    node_id: int
    buffer_x: np.ndarray
    buffer_s: np.ndarray
    rng: np.random.Generator
    energy: EnergyLedger
    interval_index: int = 0
    silent: bool = False

    @property
    def buffer(self) -> list[ScoredEntry]:
        return [ScoredEntry(x, float(s)) for x, s in zip(self.buffer_x, self.buffer_s)]


def init_node(node_id: int, first_samples, config: FilterConfig, rng: np.random.Generator,
              energy: EnergyParams | EnergyLedger | None = None) -> NodeState:
    """Node whose buffer pairs its first P observations with score 1."""
    X = np.array(first_samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != config.buffer_size:
        raise ValueError(f"need exactly {config.buffer_size} initial samples, got {X.shape[0] if X.ndim else 0}")
    if not isinstance(energy, EnergyLedger):
        energy = EnergyLedger(energy or EnergyParams())
    return NodeState(node_id, X, np.ones(config.buffer_size), rng, energy)


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _buffer_arrays(buffer):
    if isinstance(buffer, NodeState):
        return buffer.buffer_x, buffer.buffer_s
    if isinstance(buffer, tuple) and len(buffer) == 2 and isinstance(buffer[0], np.ndarray):
        return buffer
    if len(buffer) == 0:
        raise ValueError("empty buffer")
    X = np.array([np.atleast_1d(e.sample) for e in buffer], dtype=np.float64)
    s = np.array([e.score for e in buffer], dtype=np.float64)
    return X, s


def knn_estimate(x_t, buffer, L: int) -> float:
    """Mean stored score of the L buffer entries nearest to ``x_t``.

    ``buffer`` may be a sequence of ScoredEntry, a NodeState, or an
    ``(X, scores)`` array pair. Ties go to the lower buffer index.
    """
    X, s = _buffer_arrays(buffer)
    if X.shape[0] == 0:
        raise ValueError("empty buffer")
    q = np.atleast_1d(np.asarray(x_t, dtype=np.float64))[None, :]
    est, _, _ = kernels.knn_query(X, s, q, L)
    return float(est[0])


def knn_estimate_batch(X_t, buffer, L: int) -> np.ndarray:
    X, s = _buffer_arrays(buffer)
    est, _, _ = kernels.knn_query(X, s, np.atleast_2d(X_t), L)
    return est


def beta_schedule(interval_index: int, config: FilterConfig) -> float:
    """Prioritisation factor for the given completed-interval count.

    Starts at ``beta_min`` and rises linearly to ``beta_max`` over
    ``anneal_intervals`` intervals, then stays there.
    """
    frac = max((config.anneal_intervals - interval_index) / config.anneal_intervals, 0.0)
    if frac >= 1.0:
        return config.beta_min  # exact, free of rounding in the difference
    return config.beta_max - (config.beta_max - config.beta_min) * frac


def transmit_probability(s_hat, buffer_scores, beta: float):
    """Softmax weight of ``s_hat`` against the stored scores.

    At ``beta == 0`` this is exactly 1/P. It is a relative weight and can
    exceed 1; :func:`transmit_weights` maps it to a probability.
    """
    s_hat_arr = np.asarray(s_hat, dtype=np.float64)
    if not np.all(np.isfinite(s_hat_arr)):
        raise ValueError("estimated score must be finite")
    scores = np.asarray(buffer_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty buffer")
    if beta == 0:
        q = np.full(s_hat_arr.shape, 1.0 / scores.size)
        return float(q) if q.ndim == 0 else q
    den = beta * scores
    shift = float(np.max(den))
    log_norm = shift + math.log(float(np.sum(np.exp(den - shift))))
    with np.errstate(over="ignore"):
        q = np.exp(beta * s_hat_arr - log_norm)
    return float(q) if q.ndim == 0 else q


def transmit_weights(X_t, node: NodeState, config: FilterConfig) -> np.ndarray:
    """Uncapped ``R * P * q`` for each row of ``X_t``; the transmit probability is min(1, .)."""
    s_hat = knn_estimate_batch(X_t, node, config.neighbors)
    beta = beta_schedule(node.interval_index, config)
    q = transmit_probability(s_hat, node.buffer_s, beta)
    return config.target_rate * config.buffer_size * np.atleast_1d(q)


def decide_transmit(x_t, node: NodeState, config: FilterConfig) -> bool:
    """Bernoulli transmit decision for one unlabeled sample."""
    if node.buffer_x.shape[0] != config.buffer_size:
        raise ValueError("node buffer is not initialised")
    p = min(1.0, float(transmit_weights(np.atleast_2d(x_t), node, config)[0]))
    return bool(node.rng.random() < p)


def refresh_buffer(node: NodeState, feedback: Sequence[ScoredEntry], charge: bool = True) -> NodeState:
    """Append feedback, drop the oldest entries, advance the interval counter."""
    P = node.buffer_x.shape[0]
    if len(feedback) > P:
        raise ValueError(f"feedback of {len(feedback)} entries exceeds buffer size {P}")
    if len(feedback):
        fx, fs = _buffer_arrays(feedback)
        if fx.shape[1] != node.buffer_x.shape[1]:
            raise ValueError("feedback sample dimension does not match the buffer")
        node.buffer_x = np.concatenate([node.buffer_x, fx])[-P:]
        node.buffer_s = np.concatenate([node.buffer_s, fs])[-P:]
    node.interval_index += 1
    if charge:
        node.energy.charge_rx()
    return node
