"""Reference filters: uniform thinning and the label-aware genie.

Both are rate-matched to the target R so packet budgets are comparable
with the importance filter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_rate(R):
    if not 0 < R <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {R}")


def uniform_decide(rng: np.random.Generator, R: float) -> bool:
    _check_rate(R)
    return bool(rng.random() < R)


@dataclass(frozen=True)
class ClassDistribution:
    probabilities: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "probabilities", tuple(float(v) for v in p))
        if p.ndim != 1 or p.size == 0:
            raise ValueError("need at least one class probability")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"class probabilities must be non-negative and sum to 1, got {p.tolist()}")

    @classmethod
    def from_labels(cls, labels, class_count: int) -> "ClassDistribution":
        counts = np.bincount(np.asarray(labels), minlength=class_count).astype(np.float64)
        return cls(tuple(counts / counts.sum()))

    @property
    def class_count(self) -> int:
        return len(self.probabilities)


def genie_weights(dist: ClassDistribution) -> np.ndarray:
    """Inverse-frequency weight of every class, normalised over classes.

    Classes with zero probability get weight 0.
    """
    p = np.asarray(dist.probabilities)
    inv = np.where(p > 0, 1.0 / np.where(p > 0, p, 1.0), 0.0)
    return inv / inv.sum()


def genie_probability(label: int, dist: ClassDistribution) -> float:
    p = dist.probabilities
    if not 0 <= label < len(p):
        raise ValueError(f"label {label} outside {len(p)} classes")
    if p[label] <= 0:
        raise ValueError(f"class {label} has zero probability")
    return float(genie_weights(dist)[label])


def genie_transmit_probability(labels, dist: ClassDistribution, R: float) -> np.ndarray:
    """min(1, R * q(y) / E[q(Y)]), which keeps the expected rate at R.

    For balanced classes E[q(Y)] = 1/C, so this reduces to min(1, R*C*q).
    """
    _check_rate(R)
    w = genie_weights(dist)
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= w.size):
        raise ValueError("label outside the class range")
    mean_w = float(np.dot(dist.probabilities, w))
    return np.minimum(1.0, R * w[labels] / mean_w)


def genie_decide(rng: np.random.Generator, label: int, dist: ClassDistribution, R: float) -> bool:
    genie_probability(label, dist)  # validates the label
    return bool(rng.random() < genie_transmit_probability([label], dist, R)[0])
