"""Access-point side: labelling, training, scoring and score feedback."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as nn
from .datasets import Dataset, Sample
from .filtering import ScoredEntry

log = logging.getLogger(__name__)


@dataclass
class ReceivedRecord:
    node_id: int
    sample: Sample
    label: int
    seq: int  # global receipt order
    score: float | None = None

    @property
    def x(self) -> np.ndarray:
        return self.sample.x


class LabelOracle:
    """Error-free labeller backed by the dataset's ground truth."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset

    def __call__(self, sample: Sample) -> int:
        idx = getattr(sample, "index", None)
        if idx is None or not 0 <= idx < len(self.dataset):
            raise KeyError(f"sample {sample!r} is not traceable to ground truth")
        return int(self.dataset.labels[idx])


@dataclass
class ApState:
    model: nn.ModelState
    oracle: LabelOracle
    rng: np.random.Generator
    history: dict[int, list[ReceivedRecord]] = field(default_factory=dict)
    interval: dict[int, list[ReceivedRecord]] = field(default_factory=dict)
    round_index: int = 0
    seq: int = 0

    def receive(self, node_id: int, sample: Sample) -> ReceivedRecord:
        rec = ReceivedRecord(node_id, sample, self.oracle(sample), self.seq)
        self.seq += 1
        self.interval.setdefault(node_id, []).append(rec)
        self.history.setdefault(node_id, []).append(rec)
        return rec

    def interval_records(self) -> list[ReceivedRecord]:
        return sorted((r for recs in self.interval.values() for r in recs), key=lambda r: r.seq)

    def all_records(self) -> list[ReceivedRecord]:
        return sorted((r for recs in self.history.values() for r in recs), key=lambda r: r.seq)

    def start_interval(self) -> None:
        self.interval = {}


def label_oracle(ap: ApState, sample: Sample) -> int:
    return ap.oracle(sample)


def _stack(records):
    X = np.array([r.x for r in records], dtype=np.float64)
    y = np.array([r.label for r in records], dtype=np.int64)
    return X, y


def train_round(ap: ApState, batch: list[ReceivedRecord], optimizer: nn.OptimizerConfig,
                epochs: int = 1, batch_size: int | None = None) -> ApState:
    """``epochs`` shuffled passes of mini-batch steps over the received batch."""
    if epochs < 1:
        raise ValueError("epochs must be positive")
    ap.round_index += 1
    if not batch:
        log.info("round %d: nothing received, training skipped", ap.round_index)
        return ap
    X, y = _stack(batch)
    size = batch_size or len(batch)
    state = ap.model
    for _ in range(epochs):
        order = ap.rng.permutation(len(batch))
        for start in range(0, len(batch), size):
            idx = order[start:start + size]
            g = nn.gradient(state, X[idx], y[idx], training=True, rng=ap.rng)
            state = nn.optimizer_step(state, g, optimizer)
    ap.model = state
    return ap


def score_batch(ap: ApState, batch: list[ReceivedRecord]) -> list[ScoredEntry]:
    """Exact leverage scores under the current model; also stored on the records."""
    if not batch:
        return []
    X, y = _stack(batch)
    scores = nn.leverage_scores(ap.model, X, y)
    for rec, s in zip(batch, scores):
        rec.score = float(s)
    return [ScoredEntry(rec.x, float(s)) for rec, s in zip(batch, scores)]


def super_sample(samples) -> np.ndarray:
    """Coordinate-wise mean of a node's samples from one interval."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise ValueError("super_sample needs at least one sample")
    return X.mean(axis=0)


def select_feedback(ap: ApState, node_id: int, P: int, b: int) -> list[ScoredEntry]:
    """Scores for the samples behind the ceil(P/b) super-samples nearest node ``node_id``'s own.

    Candidates are the super-samples of every node that delivered something
    this interval. A node that delivered nothing gets the ceil(P/b) most
    recent super-samples instead. At most the P most recent entries return.
    """
    groups = {k: recs for k, recs in ap.interval.items() if recs}
    if not groups:
        return []
    count = math.ceil(P / max(1, b))
    nodes = sorted(groups)
    centers = np.array([super_sample([r.x for r in groups[k]]) for k in nodes])
    if node_id in groups:
        own = centers[nodes.index(node_id)]
        d = np.sqrt(np.sum((centers - own) ** 2, axis=1))
        chosen = [nodes[i] for i in np.argsort(d, kind="stable")[:count]]
    else:
        latest = sorted(nodes, key=lambda k: groups[k][-1].seq, reverse=True)
        chosen = latest[:count]
    recs = sorted((r for k in chosen for r in groups[k]), key=lambda r: r.seq)[-P:]
    missing = [r for r in recs if r.score is None]
    if missing:
        score_batch(ap, missing)
    return [ScoredEntry(r.x, r.score) for r in recs]
