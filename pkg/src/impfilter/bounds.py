"""Diagnostics for the kNN leverage-score estimate.

These need exact scores, hence labels and the AP model, so they only ever
run on the access point side.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import kernels
from . import model as nn


@dataclass
class BoundReport:
    eta_b: float
    eta_v: float
    coverage_fraction: float
    radius_violations: int
    delta_target: float
    samples_checked: int = 0
    neighbors: int = 0
    buffer_size: int = 0
    dim: int = 0
    log_condition_met: bool = True

    @property
    def passed(self) -> bool:
        return self.coverage_fraction >= 1.0 - self.delta_target

    def to_text(self) -> str:
        items = asdict(self)
        items["passed"] = self.passed
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in items.items())

    @classmethod
    def from_text(cls, text: str) -> "BoundReport":
        vals = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            vals[key.strip()] = raw.strip()
        vals.pop("passed", None)
        kw = {}
        for name, f in cls.__dataclass_fields__.items():
            raw = vals[name]
            if f.type in ("int", int):
                kw[name] = int(raw)
            elif f.type in ("bool", bool):
                kw[name] = raw == "true"
            else:
                kw[name] = float(raw)
        return cls(**kw)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def eta_bias(L: int, P: int, n: int) -> float:
    if not (1 <= L < P) or n < 1:
        raise ValueError(f"need 1 <= L < P and n >= 1 (L={L}, P={P}, n={n})")
    return (L / P) ** (1.0 / n)


def eta_variance(L: int, P: int) -> float:
    if P < 2 or L < 1:
        raise ValueError(f"need P >= 2 and L >= 1 (L={L}, P={P})")
    return math.sqrt(math.log(P) / L)


def log_condition(L: int, P: int, warn: bool = True) -> bool:
    """True when L >= ln P; otherwise warns (the bound is not claimed there)."""
    ok = L >= math.log(P)
    if not ok and warn:
        warnings.warn(f"L={L} < ln P={math.log(P):.3f}: estimation bound not guaranteed", stacklevel=2)
    return ok


def empirical_moduli(ref_x, ref_scores, x_t, s_t: float, r: float) -> tuple[float, float]:
    """Largest upward and downward score change within distance ``r`` of ``x_t``.

    Returns ``(u_hat, u_check)``; both are 0 when the ball holds no reference
    point other than exact copies of ``x_t`` with the same score.
    """
    X = np.asarray(ref_x, dtype=np.float64)
    s = np.asarray(ref_scores, dtype=np.float64)
    if X.shape[0] == 0:
        return 0.0, 0.0
    d = np.sqrt(np.sum((X - np.asarray(x_t, dtype=np.float64)) ** 2, axis=1))
    inside = s[d <= r]
    if inside.size == 0:
        return 0.0, 0.0
    return max(0.0, float(np.max(inside - s_t))), max(0.0, float(np.max(s_t - inside)))


def _require_unit_cube(X, what):
    X = np.asarray(X)
    if X.size and (X.min() < -1e-12 or X.max() > 1 + 1e-12):
        raise ValueError(f"{what} must be normalised to [0, 1]^n")


def check_bounds(samples, labels, buffer_x, buffer_s, score_fn: Callable, L: int,
                 delta: float = 0.05) -> BoundReport:
    """Fraction of samples whose kNN estimate falls inside the two-sided band.

    ``score_fn(X, y)`` returns exact scores; the moduli are taken over the
    checked samples together with the buffer, at radius ``eta_b``.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    bx = np.asarray(buffer_x, dtype=np.float64)
    bs = np.asarray(buffer_s, dtype=np.float64)
    P, n = bx.shape
    if L >= P:
        raise ValueError(f"L={L} must be smaller than the buffer size {P}")
    _require_unit_cube(X, "samples")
    _require_unit_cube(bx, "buffer samples")
    eb = eta_bias(L, P, n)
    ev = eta_variance(L, P)
    cond = log_condition(L, P)
    exact = np.asarray(score_fn(X, labels), dtype=np.float64)
    est, _, d2 = kernels.knn_query(bx, bs, X, L)
    ref_x = np.concatenate([X, bx])
    ref_s = np.concatenate([exact, bs])
    inside = 0
    for i in range(X.shape[0]):
        u_hat, u_check = empirical_moduli(ref_x, ref_s, X[i], exact[i], eb)
        if exact[i] - u_check - ev <= est[i] <= exact[i] + u_hat + ev:
            inside += 1
    violations = int(np.sum(np.sqrt(d2[:, L - 1]) > eb))
    return BoundReport(eb, ev, inside / X.shape[0], violations, delta, X.shape[0], L, P, n, cond)


def radius_check(x_t, buffer_x, L: int, P: int | None = None, n: int | None = None):
    """(distance to the L-th nearest buffer sample, (L/P)^(1/n), within)."""
    bx = np.asarray(buffer_x, dtype=np.float64)
    P = P or bx.shape[0]
    n = n or bx.shape[1]
    _require_unit_cube(bx, "buffer samples")
    q = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    _, _, d2 = kernels.knn_query(bx, np.zeros(bx.shape[0]), q, L)
    r_L = float(np.sqrt(d2[0, L - 1]))
    bound = eta_bias(L, P, n)
    return r_L, bound, r_L <= bound


def model_score_fn(state: nn.ModelState) -> Callable:
    return lambda X, y: nn.leverage_scores(state, X, y)
