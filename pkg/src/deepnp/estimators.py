"""Erasure-rate providers that need no training.

A provider is anything with ``estimate(history, slot) -> float``: it is
called once per slot with the feedback known at that slot and returns the
erasure rate the sender should plan with.
"""
from __future__ import annotations

import math

import numpy as np

PRIOR = 0.5


class EstimationError(ValueError):
    pass


class FeedbackHistory:
    """Append-only record of delayed feedback bits (1 = ACK, 0 = NACK)."""

    def __init__(self, rtt: int, bits=()):
        self.rtt = rtt
        self.bits: list[int] = []
        self.ones = 0
        for b in bits:
            self.append(b)

    def append(self, bit: int) -> None:
        bit = int(bit)
        if bit not in (0, 1):
            raise ValueError(f"feedback bit must be 0 or 1, got {bit}")
        self.bits.append(bit)
        self.ones += bit

    def __len__(self) -> int:
        return len(self.bits)

    def tail(self, n: int) -> list[int]:
        return self.bits[-n:] if n > 0 else []


def stat_estimate(history: FeedbackHistory) -> float:
    """Long-run NACK rate plus a margin of one standard deviation per RTT.

    The mean runs over the whole history; the variance only over the last
    RTT bits (or everything, when fewer have arrived).
    """
    n = len(history)
    if n == 0:
        raise EstimationError("no feedback received yet")
    recent = np.asarray(history.tail(history.rtt), dtype=float)
    var = float(recent.var())
    eps = 1.0 - history.ones / n + math.sqrt(var) / history.rtt
    return min(1.0, max(0.0, eps))


def mean_estimate(history: FeedbackHistory) -> float:
    """Expected number of successful slots in the next RTT."""
    n = len(history)
    if n == 0:
        raise EstimationError("no feedback received yet")
    return history.rtt * history.ones / n


def genie_estimate(delivered) -> float:
    """Exact erasure fraction of a window of true delivery indicators."""
    delivered = np.asarray(delivered, dtype=float)
    if delivered.size == 0:
        return 0.0
    return float(1.0 - delivered.mean())


class StatPredictor:
    kind = "stat"

    def estimate(self, history: FeedbackHistory, slot: int) -> float:
        if not len(history):
            return PRIOR
        return stat_estimate(history)


class MeanPredictor:
    kind = "mean"

    def estimate(self, history: FeedbackHistory, slot: int) -> float:
        if not len(history):
            return PRIOR
        return 1.0 - mean_estimate(history) / history.rtt


class GeniePredictor:
    """Non-causal reference: reads the true erasures of the in-flight slots
    ``slot-RTT+1 .. slot-1``, whose feedback the sender does not have yet."""

    kind = "genie"

    def __init__(self, erased, rtt: int):
        self.delivered = ~np.asarray(erased, dtype=bool)
        self.rtt = rtt

    def estimate(self, history: FeedbackHistory, slot: int) -> float:
        lo = max(0, slot - self.rtt + 1)
        return genie_estimate(self.delivered[lo:slot])
