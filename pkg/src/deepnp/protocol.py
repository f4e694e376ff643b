"""Adaptive causal sliding-window RLNC sender/receiver and the session loop.

Slot timing (integer slots, one transmission per slot):

* a packet sent in slot ``t`` reaches the receiver in slot ``t + fwd``
  where ``fwd = rtt // 2`` (``(rtt - 1) / 2`` for odd RTT);
* its feedback bit is usable by the sender when deciding slot ``t + rtt``,
  so ``rtt - 1`` transmissions are always awaiting feedback.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import GEChannel, make_rng
from .estimators import FeedbackHistory
from .gf import CodedCombination, DecoderMatrix, random_coefficients, restrict

NEW, REPEAT, FEC = "new", "repeat", "fec"


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SessionConfig:
    rtt: int
    th: float = 0.0
    k: int | None = None  # a-priori FEC period; defaults to rtt
    w: int | None = None  # window limit; defaults to 3 * rtt
    total_slots: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.rtt < 1:
            raise ValueError(f"rtt must be >= 1, got {self.rtt}")
        if self.k is None:
            object.__setattr__(self, "k", self.rtt)
        if self.w is None:
            object.__setattr__(self, "w", 3 * self.rtt)
        if self.k < 1 or self.w < 1:
            raise ValueError("k and w must be >= 1")
        if self.th < 0:
            raise ValueError(f"th must be >= 0, got {self.th}")
        if self.total_slots < 1:
            raise ValueError("total_slots must be >= 1")

    @property
    def forward_delay(self) -> int:
        return self.rtt // 2

    @property
    def t_prop(self) -> float:
        return (self.rtt - 1) / 2


def compute_delta(md_nack, ad_ack, c_new, c_same, eps_hat, th) -> float:
    """DoF rate gap: expected missing over expected added DoFs, minus 1 + th."""
    num = md_nack + eps_hat * c_new
    den = ad_ack + (1.0 - eps_hat) * c_same
    if den <= 0:
        return math.inf if num > 0 else -1.0 - th
    return num / den - 1.0 - th


class _Tx:
    __slots__ = ("slot", "repeat", "comb", "acked", "retired")

    def __init__(self, slot, repeat, comb):
        self.slot = slot
        self.repeat = repeat
        self.comb = comb
        self.acked = None
        self.retired = False


class SenderState:
    """Sender bookkeeping.

    The sender keeps a mirror of the receiver's decoder, fed with every ACKed
    combination, so ``w_min`` is exactly the receiver's decoded prefix as of
    the latest feedback. DoF counters only cover transmissions whose window
    still reaches ``w_min``; anything entirely below it is retired.
    """

    def __init__(self, rtt: int):
        self.w_min = 0
        self.w_max = -1
        self.md_nack = 0
        self.ad_ack = 0
        self.c_new = 0
        self.c_same = 0
        self.new_since_fec = 0
        self.fec_budget = 0
        self.feedback_history = FeedbackHistory(rtt)
        self.first_tx_time: list[int] = []
        self.mirror = DecoderMatrix()
        self._active: deque[_Tx] = deque()
        self._inflight: dict[int, _Tx] = {}

    @property
    def span(self) -> int:
        return self.w_max - self.w_min + 1

    @property
    def packets_sent(self) -> int:
        return self.w_max + 1

    def ingest_feedback(self, slot: int, bit: int) -> None:
        tx = self._inflight.pop(slot)
        self.feedback_history.append(bit)
        tx.acked = bool(bit)
        if not tx.retired:
            if tx.repeat:
                self.c_same -= 1
                self.ad_ack += tx.acked
            else:
                self.c_new -= 1
                self.md_nack += not tx.acked
        if tx.acked:
            comb = restrict(tx.comb, self.mirror.base_index)
            if comb is not None:
                self.mirror.absorb(comb)
            base = self.mirror.advance()
            if base > self.w_min:
                self.w_min = base
                self._retire()

    def _retire(self) -> None:
        while self._active and self._active[0].comb.w_max < self.w_min:
            tx = self._active.popleft()
            tx.retired = True
            if tx.acked is None:
                if tx.repeat:
                    self.c_same -= 1
                else:
                    self.c_new -= 1
            elif tx.repeat and tx.acked:
                self.ad_ack -= 1
            elif not tx.repeat and not tx.acked:
                self.md_nack -= 1

    def delta(self, eps_hat: float, th: float) -> float:
        return compute_delta(self.md_nack, self.ad_ack, self.c_new, self.c_same, eps_hat, th)

    def emit(self, slot: int, config: SessionConfig, eps_hat: float, rng) -> tuple[CodedCombination, str, float]:
        delta = self.delta(eps_hat, config.th)
        span = self.span
        if span <= 0:
            # everything sent is known decoded: redundancy would be wasted
            self.fec_budget = 0
            action = NEW
        elif span >= config.w:
            action = REPEAT
        elif self.fec_budget > 0:
            self.fec_budget -= 1
            action = FEC
        elif delta > 0:
            action = REPEAT
        else:
            action = NEW

        if action == NEW:
            self.w_max += 1
            self.first_tx_time.append(slot)
            self.new_since_fec += 1
            if self.new_since_fec >= config.k:
                self.fec_budget = round_half_up(eps_hat * config.k)
                self.new_since_fec = 0

        comb = CodedCombination(
            self.w_min, self.w_max, random_coefficients(self.w_max - self.w_min + 1, rng)
        )
        tx = _Tx(slot, action != NEW, comb)
        self._active.append(tx)
        self._inflight[slot] = tx
        if tx.repeat:
            self.c_same += 1
        else:
            self.c_new += 1
        return comb, action, delta


def sender_step(state: SenderState, config: SessionConfig, slot: int, arrived_feedback, eps_hat, rng):
    """One sender slot: ingest feedback, pick an action, emit a combination.

    ``arrived_feedback`` is ``(sent_slot, bit)`` or None. ``eps_hat`` is a
    float or a callable mapping the feedback history to one, evaluated after
    the new feedback is ingested.

    Returns ``(combination, action, delta)``.
    """
    if arrived_feedback is not None:
        state.ingest_feedback(*arrived_feedback)
    if callable(eps_hat):
        eps_hat = eps_hat(state.feedback_history)
    return state.emit(slot, config, eps_hat, rng)


@dataclass
class ReceiverState:
    matrix: DecoderMatrix = field(default_factory=DecoderMatrix)
    delivered: int = 0  # number of packets decoded in order
    decode_time: list[int] = field(default_factory=list)


def receiver_step(state: ReceiverState, slot: int, delivery: CodedCombination | None) -> int:
    if delivery is None:
        return 0
    comb = restrict(delivery, state.matrix.base_index)
    if comb is not None:
        state.matrix.absorb(comb)
        h = state.matrix.advance()
        if h > state.delivered:
            state.decode_time.extend([slot] * (h - state.delivered))
            state.delivered = h
    return 1


@dataclass
class SessionMetrics:
    eta: float
    delay_mean: float
    delay_max: float
    per_packet_delay: np.ndarray
    transmissions: int
    delivered_packets: int
    new_packets: int
    # set when nothing was delivered and eta = 0 falls outside (0, 1]
    degenerate: bool = False

    def as_row(self) -> dict:
        return {
            "eta": self.eta,
            "delay_mean": self.delay_mean,
            "delay_max": self.delay_max,
            "delivered": self.delivered_packets,
            "transmissions": self.transmissions,
        }


@dataclass
class SlotTrace:
    slot: list = field(default_factory=list)
    action: list = field(default_factory=list)
    w_min: list = field(default_factory=list)
    w_max: list = field(default_factory=list)
    erased: list = field(default_factory=list)
    feedback_bit: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    eps_hat: list = field(default_factory=list)

    COLUMNS = ("slot", "action", "w_min", "w_max", "erased", "feedback_bit", "delta", "eps_hat")

    def append(self, *values) -> None:
        for col, v in zip(self.COLUMNS, values):
            getattr(self, col).append(v)

    def __len__(self) -> int:
        return len(self.slot)

    def rows(self):
        return zip(*(getattr(self, c) for c in self.COLUMNS))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(self.COLUMNS)
            for row in self.rows():
                slot, action, lo, hi, erased, fb, delta, eps = row
                out.writerow([slot, action, lo, hi, int(erased), "" if fb is None else fb,
                              _fmt(delta), _fmt(eps)])


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def write_metrics_csv(path: str | Path, metrics: SessionMetrics) -> None:
    row = metrics.as_row()
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=list(row))
        out.writeheader()
        out.writerow(row)


@dataclass
class SessionResult:
    metrics: SessionMetrics
    trace: SlotTrace | None
    sender: SenderState
    receiver: ReceiverState


def run_session(config: SessionConfig, channel, predictor, record_trace: bool = True) -> SessionResult:
    """Run ``config.total_slots`` slots.

    ``channel`` is a :class:`GEChannel` or a precomputed erasure sequence
    (True = erased) of at least ``total_slots`` entries. ``predictor`` is any
    provider with ``estimate(history, slot)``.
    """
    T = config.total_slots
    if isinstance(channel, GEChannel):
        erased = channel.steps(T)
    else:
        erased = np.asarray(channel, dtype=bool)
        if erased.size < T:
            raise ValueError(f"channel trace has {erased.size} slots, need {T}")
    erased = erased[:T].tolist()

    rng = make_rng(config.seed)
    tx = SenderState(config.rtt)
    rx = ReceiverState()
    trace = SlotTrace() if record_trace else None
    fwd, rtt = config.forward_delay, config.rtt
    bits: dict[int, int] = {}

    for t in range(T):
        fb = None
        if t >= rtt:
            fb = (t - rtt, bits.pop(t - rtt))
            tx.ingest_feedback(*fb)
        eps = float(predictor.estimate(tx.feedback_history, t))
        comb, action, delta = tx.emit(t, config, eps, rng)
        bits[t] = receiver_step(rx, t + fwd, None if erased[t] else comb)
        if trace is not None:
            trace.append(t, action, comb.w_min, comb.w_max, erased[t],
                         None if fb is None else fb[1], delta, eps)

    return SessionResult(session_metrics(tx, rx, T), trace, tx, rx)


def session_metrics(tx: SenderState, rx: ReceiverState, transmissions: int) -> SessionMetrics:
    n = rx.delivered
    delays = np.asarray(rx.decode_time[:n], dtype=float) - np.asarray(tx.first_tx_time[:n], dtype=float)
    if n == 0:
        return SessionMetrics(0.0, math.nan, math.nan, delays, transmissions, 0,
                              tx.packets_sent, degenerate=True)
    return SessionMetrics(
        eta=n / transmissions,
        delay_mean=float(delays.mean()),
        delay_max=float(delays.max()),
        per_packet_delay=delays,
        transmissions=transmissions,
        delivered_packets=n,
        new_packets=tx.packets_sent,
    )
