"""Discrete-time simulation of an IoT cell.

One tick is one generated sample per node, so an interval of ``m`` ticks
carries ``R*m`` transmissions in expectation. Every interval each node
generates its samples, filters them, the AP labels and trains on what
arrived, scores it, and (for the importance scheme) sends each node a fresh
set of scored samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as nn
from .ap import ApState, LabelOracle, score_batch, select_feedback, train_round
from .baselines import ClassDistribution, genie_transmit_probability, genie_weights
from .datasets import Dataset, Sample, StreamConfig, Streams, partition_streams
from .energy import EnergyLedger, EnergyParams, longevity
from .filtering import FilterConfig, beta_schedule, init_node, refresh_buffer, transmit_weights

SCHEMES = ("importance", "uniform", "genie", "transmit_all")
# binomial allowance, in standard deviations, for Bernoulli-mode contract checks
ALLOWANCE_SIGMAS = 4.0
TRAIN_SETS = ("interval", "cumulative")
SELECTIONS = ("bernoulli", "quota")
METRIC_FIELDS = ("round", "scheme", "rate", "seed", "train_error", "test_error",
                 "packets", "energy_mean", "energy_max", "beta")

__all__ = ["SimConfig", "RoundMetrics", "SimResult", "run", "evaluate", "longevity",
           "fit_scaling_law", "check_rate_compliance", "check_fairness", "ComplianceError",
           "systematic_sample", "inclusion_probabilities", "quota_size"]


class ComplianceError(AssertionError):
    """A run broke the rate or fairness contract."""


@dataclass(frozen=True)
class SimConfig:
    nodes: int = 4
    samples_per_interval: int = 100
    rounds: int = 10
    rate: float = 0.3
    scheme: str = "importance"
    filter: FilterConfig = field(default_factory=FilterConfig)
    hidden_layers: tuple[int, ...] = (8,)
    activation: str = "relu"
    dropout_rate: float = 0.0
    loss_kind: str = "cross_entropy"
    optimizer: nn.OptimizerConfig = field(default_factory=nn.OptimizerConfig)
    energy: EnergyParams = field(default_factory=EnergyParams)
    seed: int = 0
    selection: str = "bernoulli"
    epochs: int = 1
    batch_size: int = 0  # 0 = whole interval batch
    test_fraction: float = 0.2
    cycle: bool = True
    train_set: str = "cumulative"  # or "interval": only this round's packets

    def __post_init__(self):
        if min(self.nodes, self.samples_per_interval, self.rounds, self.epochs) < 1:
            raise ValueError("nodes, samples_per_interval, rounds and epochs must be positive")
        if not 0 < self.rate <= 1:
            raise ValueError(f"rate must lie in (0, 1], got {self.rate}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"unknown selection mode {self.selection!r}")
        if self.train_set not in TRAIN_SETS:
            raise ValueError(f"unknown training set {self.train_set!r}")
        if self.batch_size < 0:
            raise ValueError("batch_size must be non-negative")

    @property
    def interval_length(self) -> int:
        return self.samples_per_interval

    def model_config(self, n_in: int, n_out: int, seed: int) -> nn.ModelConfig:
        return nn.ModelConfig((n_in, *self.hidden_layers, n_out), self.activation,
                              self.dropout_rate, self.loss_kind, seed)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    scheme: str
    rate: float
    seed: int
    train_error: float
    test_error: float
    packets: int
    energy_mean: float
    energy_max: float
    beta: float

    def row(self) -> list[str]:
        return [_fmt(getattr(self, f)) for f in METRIC_FIELDS]

    @classmethod
    def from_row(cls, row: dict) -> "RoundMetrics":
        return cls(int(row["round"]), row["scheme"], float(row["rate"]), int(row["seed"]),
                   float(row["train_error"]), float(row["test_error"]), int(row["packets"]),
                   float(row["energy_mean"]), float(row["energy_max"]), float(row["beta"]))


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass
class SimResult:
    config: SimConfig
    metrics: list[RoundMetrics]
    ledgers: list[EnergyLedger]
    model: nn.ModelState
    nodes: list | None = None
    ap: ApState | None = None
    streams: Streams | None = None
    depleted: dict[int, int] = field(default_factory=dict)  # node -> round it went silent

    @property
    def packets_total(self) -> int:
        return sum(led.tx for led in self.ledgers)

    def tx_fraction(self) -> np.ndarray:
        return np.array([led.tx / led.wake if led.wake else 0.0 for led in self.ledgers])

    def energy_per_interval(self) -> np.ndarray:
        return np.array([led.consumed for led in self.ledgers]) / self.config.rounds

    def longevity(self) -> np.ndarray:
        return np.array([longevity(led, self.config.rounds) for led in self.ledgers])


def quota_size(rate: float, m: int) -> int:
    """Exact per-interval packet count in quota mode; never above R*m."""
    return int(math.floor(rate * m + 1e-9))


def inclusion_probabilities(weights, k: int) -> np.ndarray:
    """Inclusion probabilities proportional to ``weights``, capped at 1, summing to ``k``."""
    w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, None)
    n = w.size
    if k >= n:
        return np.ones(n)
    pi = np.zeros(n)
    capped = np.zeros(n, dtype=bool)
    while True:
        free = ~capped
        rem = k - int(capped.sum())
        total = w[free].sum()
        if total <= 0 or not np.isfinite(total):
            pi[free] = rem / free.sum()
            return pi
        pi[free] = rem * w[free] / total
        over = free & (pi >= 1.0)
        if not over.any():
            return pi
        capped |= over
        pi[capped] = 1.0


def systematic_sample(weights, k: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask with exactly ``k`` picks, unequal-probability systematic sampling."""
    n = len(weights)
    mask = np.zeros(n, dtype=bool)
    if k <= 0:
        return mask
    if k >= n:
        mask[:] = True
        return mask
    pi = inclusion_probabilities(weights, k)
    perm = rng.permutation(n)
    cum = np.cumsum(pi[perm])
    cum *= k / cum[-1]
    points = rng.random() + np.arange(k)
    picks = np.minimum(np.searchsorted(cum, points, side="right"), n - 1)
    mask[perm[picks]] = True
    return mask


def evaluate(state: nn.ModelState, train_X, train_y, test_X, test_y) -> tuple[float, float]:
    """Misclassification rates on the received data and on the held-out set."""
    train = nn.error_rate(state, train_X, train_y) if len(train_y) else math.nan
    return train, nn.error_rate(state, test_X, test_y)


def fit_scaling_law(rates, errors) -> tuple[float, float]:
    """Least-squares fit of log(error) = log(alpha) + exponent * log(rate).

    Points with non-positive error are dropped. Returns ``(alpha, exponent)``.
    """
    r = np.asarray(rates, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    keep = (e > 0) & np.isfinite(e) & (r > 0)
    r, e = r[keep], e[keep]
    if np.unique(r).size < 3:
        raise ValueError("need at least 3 distinct rates with positive error")
    slope, intercept = np.polyfit(np.log(r), np.log(e), 1)
    return float(np.exp(intercept)), float(slope)


def _seeds(seed: int, nodes: int):
    ss = np.random.SeedSequence(seed)
    stream_ss, model_ss, ap_ss, *node_ss = ss.spawn(3 + nodes)
    return (int(stream_ss.generate_state(1)[0]), int(model_ss.generate_state(1)[0]),
            np.random.default_rng(ap_ss), [np.random.default_rng(s) for s in node_ss])


def _decisions(config, scheme, X, labels, node, fcfg, rng, dist):
    R = config.rate
    m = X.shape[0]
    if scheme == "transmit_all":
        return np.ones(m, dtype=bool)
    if config.selection == "quota":
        if scheme == "importance":
            w = transmit_weights(X, node, fcfg)
        elif scheme == "genie":
            w = genie_weights(dist)[labels]
        else:
            w = np.ones(m)
        return systematic_sample(w, quota_size(R, m), rng)
    u = rng.random(m)
    if scheme == "importance":
        p = np.minimum(1.0, transmit_weights(X, node, fcfg))
    elif scheme == "genie":
        p = genie_transmit_probability(labels, dist, R)
    else:
        p = np.full(m, R)
    return u < p


def run(config: SimConfig, dataset: Dataset) -> SimResult:
    """Simulate ``config.rounds`` intervals; deterministic in ``config.seed``."""
    K, m, R = config.nodes, config.samples_per_interval, config.rate
    scheme = config.scheme
    stream_seed, model_seed, ap_rng, node_rngs = _seeds(config.seed, K)
    streams = partition_streams(dataset, StreamConfig(
        samples_per_interval=m, node_count=K, shuffle_seed=stream_seed,
        test_fraction=config.test_fraction, cycle=config.cycle))
    test = streams.test_set()
    model_cfg = config.model_config(dataset.dim, dataset.class_count, model_seed % (2**31))
    ap = ApState(nn.init_model(model_cfg), LabelOracle(dataset), ap_rng)
    fcfg = replace(config.filter, target_rate=R)
    ledgers = [EnergyLedger(config.energy) for _ in range(K)]
    nodes = None
    if scheme == "importance":
        P = fcfg.buffer_size
        nodes = [init_node(k, dataset.features[streams.take(k, 0, P)], fcfg, node_rngs[k], ledgers[k])
                 for k in range(K)]
    dist = ClassDistribution.from_labels(dataset.labels[streams.train_idx], dataset.class_count)
    b_nominal = max(1, int(round(R * m)))
    silent = [False] * K
    depleted = {}
    metrics = []

    for rnd in range(config.rounds):
        ap.start_interval()
        beta = beta_schedule(rnd, fcfg) if scheme == "importance" else 0.0
        packets = 0
        for k in range(K):
            if silent[k]:
                continue
            idx = streams.interval(k, rnd)
            X = dataset.features[idx]
            send = _decisions(config, scheme, X, dataset.labels[idx],
                              nodes[k] if nodes else None, fcfg, node_rngs[k], dist)
            led = ledgers[k]
            for j in range(m):
                led.charge_wake()
                if send[j]:
                    led.charge_tx()
                    packets += 1
                    ap.receive(k, Sample(int(idx[j]), X[j]))
                if led.exhausted:
                    silent[k] = True
                    depleted[k] = rnd + 1
                    break

        batch = ap.interval_records()
        pool = ap.all_records() if config.train_set == "cumulative" else batch
        train_round(ap, pool, config.optimizer, config.epochs, config.batch_size or None)
        score_batch(ap, batch)
        if nodes is not None:
            for k in range(K):
                if silent[k]:
                    continue
                refresh_buffer(nodes[k], select_feedback(ap, k, fcfg.buffer_size, b_nominal))
                if ledgers[k].exhausted:
                    silent[k] = True
                    depleted[k] = rnd + 1

        seen = ap.all_records()
        train_err, test_err = evaluate(ap.model, np.array([r.x for r in seen]).reshape(len(seen), -1),
                                       np.array([r.label for r in seen], dtype=np.int64),
                                       test.features, test.labels)
        consumed = np.array([led.consumed for led in ledgers])
        metrics.append(RoundMetrics(rnd + 1, scheme, float(R), config.seed, train_err, test_err,
                                    packets, float(consumed.mean()), float(consumed.max()), float(beta)))

    return SimResult(config, metrics, ledgers, ap.model, nodes, ap, streams, depleted)


def check_rate_compliance(result: SimResult, tolerance: float = 0.05) -> list[str]:
    """Per-node realised transmit fraction must stay at or under R*(1+tolerance).

    Bernoulli runs get an extra binomial allowance of ``ALLOWANCE_SIGMAS``
    standard deviations; quota runs are held to the bound exactly. Returns the violations (empty when fine).
    """
    cfg = result.config
    if cfg.scheme not in ("importance", "uniform"):
        return []
    problems = []
    for k, led in enumerate(result.ledgers):
        if not led.wake:
            continue
        frac = led.tx / led.wake
        limit = cfg.rate * (1 + tolerance)
        if cfg.selection == "bernoulli":
            limit += ALLOWANCE_SIGMAS * math.sqrt(cfg.rate * (1 - cfg.rate) / led.wake)
        if frac > limit:
            problems.append(f"{cfg.scheme} R={cfg.rate} seed={cfg.seed} node {k}: "
                            f"transmit fraction {frac:.4f} > {limit:.4f}")
    return problems


def check_fairness(results, tolerance: float = 0.05) -> list[str]:
    """Realised packet totals of the filtered schemes must agree within ``tolerance``.

    When any run used Bernoulli selection its total is random, so the gap may
    also exceed the tolerance by ``ALLOWANCE_SIGMAS`` standard deviations of
    the difference of two binomial totals.
    """
    runs = [r for r in results if r.config.scheme != "transmit_all"]
    totals = {r.config.scheme: r.packets_total for r in runs}
    if len(totals) < 2:
        return []
    lo, hi = min(totals.values()), max(totals.values())
    allowed = tolerance * hi
    if any(r.config.selection == "bernoulli" for r in runs):
        R = runs[0].config.rate
        wakes = max(sum(led.wake for led in r.ledgers) for r in runs)
        allowed += ALLOWANCE_SIGMAS * math.sqrt(2 * wakes * R * (1 - R))
    if hi == 0 or hi - lo < allowed:
        return []
    return [f"packet totals differ by {(hi - lo) / hi:.1%}: {totals}"]
