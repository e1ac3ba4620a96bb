"""Per-node energy accounting in abstract units.

A node pays ``e_wake`` for every generated sample, ``e_tx`` for every
packet it sends and ``e_rx`` for every feedback reception. The default
values are placeholders, not measured figures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class EnergyParams:
    e_wake: float = 1.0
    e_tx: float = 50.0
    e_rx: float = 20.0
    battery_capacity: float = math.inf

    def __post_init__(self):
        for name in ("e_wake", "e_tx", "e_rx", "battery_capacity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class EnergyLedger:
    params: EnergyParams
    wake: int = 0
    tx: int = 0
    rx: int = 0

    @property
    def consumed(self) -> float:
        p = self.params
        return self.wake * p.e_wake + self.tx * p.e_tx + self.rx * p.e_rx

    @property
    def exhausted(self) -> bool:
        return self.consumed >= self.params.battery_capacity

    def charge_wake(self, count: int = 1) -> None:
        self.wake += count

    def charge_tx(self, count: int = 1) -> None:
        self.tx += count

    def charge_rx(self, count: int = 1) -> None:
        self.rx += count


def longevity(ledger: EnergyLedger, intervals: int) -> float:
    """Intervals the battery sustains at the ledger's mean per-interval draw.

    Returns ``inf`` when nothing was consumed.
    """
    if intervals <= 0:
        raise ValueError("intervals must be positive")
    cap = ledger.params.battery_capacity
    if cap == 0:
        return 0.0
    per_interval = ledger.consumed / intervals
    if per_interval == 0:
        return math.inf
    return cap / per_interval
