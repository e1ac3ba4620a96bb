"""Data ingestion and per-node stream generation.

Sources: CSV tables, MNIST-style IDX pairs, and two synthetic generators
(a Gaussian mixture and a multi-channel flow series with injected leaks).
All features are min-max scaled to [0, 1] before they reach a node.
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    """A feature vector traceable to its ground-truth row.

    Nodes only ever see ``x``; the label stays with the dataset and is
    looked up by the access point's oracle through ``index``.
    """

    index: int
    x: np.ndarray


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    normalization: np.ndarray | None = None  # (n, 2) per-feature (min, max)

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.features.shape[0]} rows but {self.labels.shape[0]} labels")
        if self.class_count < 1:
            raise DataError("class_count must be positive")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def class_frequencies(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count) / len(self)


def _make(features, labels, class_count=None) -> Dataset:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise DataError("class labels must be non-negative integers")
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels, class_count)


def normalize(ds: Dataset) -> Dataset:
    """Per-feature min-max scaling to [0, 1]. Constant features map to 0.

    Idempotent: a normalised dataset has min 0 and max 1 (or is constant 0)
    in every column, which the second pass leaves untouched.
    """
    lo = ds.features.min(axis=0)
    hi = ds.features.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (ds.features - lo) / safe, 0.0)
    np.clip(scaled, 0.0, 1.0, out=scaled)
    norm = np.stack([lo, hi], axis=1)
    if ds.normalization is not None:
        # keep the original raw-scale bounds
        norm = ds.normalization
    return replace(ds, features=scaled, normalization=norm)


def load_csv(path, label_column: str | int = -1, has_header: bool = True) -> Dataset:
    """Parse a numeric CSV table; the label column holds integer classes."""
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows.pop(0) if has_header else None
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None or label_column not in [h.strip() for h in header]:
            raise DataError(f"{path}: unknown label column {label_column!r}")
        col = [h.strip() for h in header].index(label_column)
    else:
        col = int(label_column)
        if not -width <= col < width:
            raise DataError(f"{path}: label column {col} out of range for {width} columns")
        col %= width
    feats, labels = [], []
    for i, row in enumerate(rows):
        line = i + (2 if has_header else 1)
        if len(row) != width:
            raise DataError(f"{path}:{line}: expected {width} fields, got {len(row)}")
        try:
            values = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}:{line}: non-numeric field ({exc})") from None
        lab = values.pop(col)
        if lab != int(lab) or lab < 0:
            raise DataError(f"{path}:{line}: label {lab} is not a class index")
        feats.append(values)
        labels.append(int(lab))
    return _make(np.array(feats, dtype=np.float64).reshape(len(rows), width - 1), labels)


def _read_idx(path, magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise DataError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise DataError(f"{path}: truncated data ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """MNIST-format image/label pair; pixels scaled to [0, 1] by /255."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return _make(feats, labels, max(10, int(labels.max()) + 1 if labels.size else 1))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise DataError("images must have shape (count, rows, cols)")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def synth_gaussians(class_means, class_covariance_scales, weights, count: int, seed: int) -> Dataset:
    """Labelled draws from an isotropic Gaussian mixture."""
    means = np.atleast_2d(np.asarray(class_means, dtype=np.float64))
    if means.shape[0] == 1 and np.ndim(class_means) == 1:
        means = means.T  # one scalar mean per class
    scales = np.broadcast_to(np.asarray(class_covariance_scales, dtype=np.float64), (means.shape[0],))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (means.shape[0],):
        raise DataError("need one weight per class")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise DataError(f"class weights must be non-negative and sum to 1, got {weights.tolist()}")
    rng = np.random.default_rng(seed)
    labels = rng.choice(means.shape[0], size=count, p=weights)
    feats = means[labels] + rng.standard_normal((count, means.shape[1])) * scales[labels, None]
    return _make(feats, labels, means.shape[0])


def synth_leak_series(channels: int = 9, hours: int = 4000, leak_fraction: float = 0.2,
                      leak_magnitude: float = 0.5, noise: float = 0.15, seed: int = 0) -> Dataset:
    """Hourly flow readings from a small pipe network with injected leaks.

    Each channel follows a daily demand curve with its own phase plus noise.
    Leak episodes (label 1) add a step increase to one random channel for a
    few hours. Stand-in for hydraulic-simulator traces.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(hours)
    phase = rng.uniform(0, 2 * np.pi, channels)
    base = rng.uniform(1.0, 2.0, channels)
    flows = base + 0.5 * np.sin(2 * np.pi * t[:, None] / 24.0 + phase)
    flows += noise * rng.standard_normal((hours, channels))
    labels = np.zeros(hours, dtype=np.int64)
    target = int(leak_fraction * hours)
    while labels.sum() < target:
        start = int(rng.integers(0, hours))
        length = int(rng.integers(3, 12))
        ch = int(rng.integers(0, channels))
        stop = min(hours, start + length)
        flows[start:stop, ch] += leak_magnitude * base[ch]
        labels[start:stop] = 1
    return _make(flows, labels, 2)


@dataclass(frozen=True)
class StreamConfig:
    source: str = "synthetic_gaussians"
    samples_per_interval: int = 100
    node_count: int = 4
    shuffle_seed: int = 0
    class_imbalance: tuple | None = None
    test_fraction: float = 0.2
    cycle: bool = True

    def __post_init__(self):
        if self.samples_per_interval < 1 or self.node_count < 1:
            raise DataError("samples_per_interval and node_count must be positive")
        if not 0 < self.test_fraction < 1:
            raise DataError("test_fraction must lie in (0, 1)")


@dataclass
class Streams:
    """Train/test split plus K disjoint per-node index sequences into ``dataset``."""

    dataset: Dataset
    train_idx: np.ndarray
    test_idx: np.ndarray
    node_idx: list[np.ndarray]
    samples_per_interval: int
    cycle: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def node_count(self) -> int:
        return len(self.node_idx)

    def interval(self, node: int, k: int) -> np.ndarray:
        """Dataset indices node ``node`` generates during interval ``k``."""
        return self.take(node, k * self.samples_per_interval, self.samples_per_interval)

    def take(self, node: int, start: int, count: int) -> np.ndarray:
        seq = self.node_idx[node]
        if len(seq) == 0:
            raise DataError(f"node {node} has an empty stream")
        if not self.cycle and start + count > len(seq):
            raise DataError(f"stream of node {node} exhausted after {len(seq)} samples")
        return seq[np.arange(start, start + count) % len(seq)]

    def test_set(self) -> Dataset:
        return self.dataset.subset(self.test_idx)


def train_test_split(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def partition_streams(dataset: Dataset, config: StreamConfig) -> Streams:
    """Split, shuffle the training part and deal it round-robin to the nodes."""
    rng = np.random.default_rng(config.shuffle_seed)
    train, test = train_test_split(len(dataset), config.test_fraction, int(rng.integers(2**32)))
    order = rng.permutation(train)
    nodes = [order[k::config.node_count] for k in range(config.node_count)]
    return Streams(dataset, train, test, nodes, config.samples_per_interval, config.cycle)


def load_dataset(source: str, **kw) -> Dataset:
    """Build a normalised dataset from a named source and its options."""
    if source == "csv":
        ds = load_csv(kw["path"], kw.get("label_column", -1), kw.get("has_header", True))
    elif source == "idx":
        ds = load_idx(kw["images"], kw["labels"])
        limit = kw.get("limit")
        if limit:
            ds = ds.subset(np.arange(min(int(limit), len(ds))))
    elif source == "synthetic_gaussians":
        ds = synth_gaussians(kw["class_means"], kw.get("class_scales", 1.0), kw["class_weights"],
                             int(kw.get("count", 5000)), int(kw.get("seed", 0)))
    elif source == "leak":
        ds = synth_leak_series(int(kw.get("channels", 9)), int(kw.get("count", 4000)),
                               seed=int(kw.get("seed", 0)))
    else:
        raise DataError(f"unknown data source {source!r}")
    return normalize(ds)
