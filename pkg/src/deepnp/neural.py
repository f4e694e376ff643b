"""Unrolled LSTM noise predictor, trained from scratch with numpy.

The network has one building block per slot of the RTT window. Block ``j``
sees the last ``m`` feedback bits plus block ``j-1``'s output and emits the
probability that slot ``j`` of the window is delivered. Hidden and cell
states are chained block to block and start from zero on every call.

Parameters are stacked along a leading block axis (length ``rtt``, or 1 when
weights are tied). Gate rows are ordered input, forget, output, candidate.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .channel import make_rng
from .estimators import PRIOR, FeedbackHistory

HIDDEN = 4
Y0 = 0.5  # previous-output input of the first block
PROB_CLAMP = 1e-7
FORMAT = "deepnp-predictor"
FORMAT_VERSION = 1
GATES = ("i", "f", "o", "c")


class LSTMCellParams(NamedTuple):
    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_o: np.ndarray
    U_c: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray


class BlockParams(NamedTuple):
    cell: LSTMCellParams
    head_weights: np.ndarray
    head_bias: float


@dataclass
class PredictorParams:
    m: int
    rtt: int
    W: np.ndarray  # (nb, 4H, m+1)
    U: np.ndarray  # (nb, 4H, H)
    b: np.ndarray  # (nb, 4H)
    head_w: np.ndarray  # (nb, H)
    head_b: np.ndarray  # (nb,)
    tied: bool = False

    ARRAYS = ("W", "U", "b", "head_w", "head_b")

    def __post_init__(self):
        nb = 1 if self.tied else self.rtt
        H = self.hidden
        expected = {
            "W": (nb, 4 * H, self.m + 1),
            "U": (nb, 4 * H, H),
            "b": (nb, 4 * H),
            "head_w": (nb, H),
            "head_b": (nb,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    @property
    def hidden(self) -> int:
        return self.U.shape[-1]

    def _k(self, j: int) -> int:
        return 0 if self.tied else j

    def block(self, j: int) -> BlockParams:
        """Per-gate view of block ``j`` (0-based)."""
        k, H = self._k(j), self.hidden
        W, U, b = self.W[k], self.U[k], self.b[k]
        parts = [W[g * H:(g + 1) * H] for g in range(4)]
        parts += [U[g * H:(g + 1) * H] for g in range(4)]
        parts += [b[g * H:(g + 1) * H] for g in range(4)]
        return BlockParams(LSTMCellParams(*parts), self.head_w[k], float(self.head_b[k]))

    @property
    def blocks(self) -> list[BlockParams]:
        return [self.block(j) for j in range(self.rtt)]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.ARRAYS}

    def copy(self) -> PredictorParams:
        return copy.deepcopy(self)

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> PredictorParams:
        return PredictorParams(self.m, self.rtt, tied=self.tied, **arrays)


def init_params(m: int, rtt: int, rng, hidden: int = HIDDEN, tied: bool = False) -> PredictorParams:
    nb = 1 if tied else rtt
    bound = 1.0 / math.sqrt(hidden)
    W = rng.uniform(-bound, bound, (nb, 4 * hidden, m + 1))
    U = rng.uniform(-bound, bound, (nb, 4 * hidden, hidden))
    b = rng.uniform(-bound, bound, (nb, 4 * hidden))
    b[:, hidden:2 * hidden] = 1.0  # forget gate
    head_w = rng.uniform(-bound, bound, (nb, hidden))
    head_b = rng.uniform(-bound, bound, nb)
    return PredictorParams(m, rtt, W, U, b, head_w, head_b, tied=tied)


def zero_params(m: int, rtt: int, hidden: int = HIDDEN, tied: bool = False) -> PredictorParams:
    nb = 1 if tied else rtt
    return PredictorParams(
        m, rtt,
        np.zeros((nb, 4 * hidden, m + 1)), np.zeros((nb, 4 * hidden, hidden)),
        np.zeros((nb, 4 * hidden)), np.zeros((nb, hidden)), np.zeros(nb),
        tied=tied,
    )


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _as_batch(params: PredictorParams, f_vec) -> tuple[np.ndarray, bool]:
    x = np.asarray(f_vec, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.m:
        raise ValueError(f"expected feedback vectors of length {params.m}, got shape {np.shape(f_vec)}")
    return x, single


def forward(params: PredictorParams, f_vec, return_cache: bool = False):
    """Delivery probabilities for the RTT slots following ``f_vec``.

    ``f_vec`` is one vector of ``m`` bits (oldest first) or a batch ``(B, m)``.
    Returns ``(B, rtt)`` or ``(rtt,)``; with ``return_cache`` also the
    per-block internal states needed by :func:`backward`.
    """
    x_fb, single = _as_batch(params, f_vec)
    B, H = x_fb.shape[0], params.hidden
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    y = np.full(B, Y0)
    out = np.empty((B, params.rtt))
    cache = []
    for j in range(params.rtt):
        k = params._k(j)
        x = np.concatenate([x_fb, y[:, None]], axis=1)
        a = x @ params.W[k].T + h @ params.U[k].T + params.b[k]
        gi = sigmoid(a[:, :H])
        gf = sigmoid(a[:, H:2 * H])
        go = sigmoid(a[:, 2 * H:3 * H])
        gc = np.tanh(a[:, 3 * H:])
        c_new = gf * c + gi * gc
        tc = np.tanh(c_new)
        h_new = go * tc
        y = sigmoid(h_new @ params.head_w[k] + params.head_b[k])
        out[:, j] = y
        if return_cache:
            cache.append((x, h, c, gi, gf, go, gc, tc, h_new, y))
        h, c = h_new, c_new
    if single:
        out = out[0]
    return (out, cache) if return_cache else out


def position_weights(rtt: int) -> np.ndarray:
    """ln(RTT - i + 1) for window positions i = 1..RTT (earliest heaviest)."""
    return np.log(np.arange(rtt, 0, -1, dtype=float))


def loss(p_hat, f, lam: float = 1.0):
    """RMSE-style term plus position-weighted binary cross-entropy.

    Works on one window (1-D) or a batch (2-D, mean over rows).
    """
    p = np.asarray(p_hat, dtype=float)
    f = np.asarray(f, dtype=float)
    if p.shape != f.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {f.shape}")
    p2 = np.atleast_2d(p)
    f2 = np.atleast_2d(f)
    rms = np.sqrt(((p2 - f2) ** 2).sum(axis=1))
    pc = np.clip(p2, PROB_CLAMP, 1 - PROB_CLAMP)
    bce = -(f2 * np.log(pc) + (1 - f2) * np.log(1 - pc))
    total = rms + lam * (bce * position_weights(p2.shape[1])).sum(axis=1)
    return float(total.mean()) if p.ndim == 2 else float(total[0])


def backward(params: PredictorParams, f_vec, f_true, lam: float = 1.0):
    """Exact gradient of the batch-mean loss w.r.t. every parameter array.

    Returns ``(loss_value, grads)`` with ``grads`` keyed like
    :meth:`PredictorParams.arrays`.
    """
    p, cache = forward(params, f_vec, return_cache=True)
    p = np.atleast_2d(p)
    f = np.atleast_2d(np.asarray(f_true, dtype=float))
    if f.shape != p.shape:
        raise ValueError(f"targets have shape {f.shape}, expected {p.shape}")
    B, R, H, m = p.shape[0], params.rtt, params.hidden, params.m
    value = loss(p, f, lam)

    diff = p - f
    rms = np.sqrt((diff ** 2).sum(axis=1, keepdims=True))
    d_rms = np.divide(diff, rms, out=np.zeros_like(diff), where=rms > 0)
    inside = (p > PROB_CLAMP) & (p < 1 - PROB_CLAMP)
    d_bce = np.where(inside, diff / (p * (1 - p)), 0.0)
    dy_direct = (d_rms + lam * position_weights(R) * d_bce) / B

    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dy_carry = np.zeros(B)
    for j in range(R - 1, -1, -1):
        k = params._k(j)
        x, h_prev, c_prev, gi, gf, go, gc, tc, h, y = cache[j]
        dz = (dy_direct[:, j] + dy_carry) * y * (1 - y)
        grads["head_w"][k] += h.T @ dz
        grads["head_b"][k] += dz.sum()
        dh = dz[:, None] * params.head_w[k] + dh_next
        dc = dh * go * (1 - tc ** 2) + dc_next
        da = np.concatenate([
            dc * gc * gi * (1 - gi),
            dc * c_prev * gf * (1 - gf),
            dh * tc * go * (1 - go),
            dc * gi * (1 - gc ** 2),
        ], axis=1)
        grads["W"][k] += da.T @ x
        grads["U"][k] += da.T @ h_prev
        grads["b"][k] += da.sum(axis=0)
        dy_carry = da @ params.W[k][:, m]
        dh_next = da @ params.U[k]
        dc_next = dc * gf
    return value, grads


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(arrays: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """One bias-corrected Adam update; returns new arrays, advances ``state``."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    out = {}
    for name, p in arrays.items():
        g = grads[name]
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return out


def make_dataset(bits, m: int, rtt: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding windows over a delivery trace (1 = ACK).

    Example ``n`` uses ``bits[n : n+m]`` as input and the following ``rtt``
    bits as targets.
    """
    bits = np.asarray(bits, dtype=float)
    n = bits.size - m - rtt + 1
    if n < 1:
        raise ValueError(f"trace of {bits.size} bits is shorter than m + rtt = {m + rtt}")
    win = np.lib.stride_tricks.sliding_window_view(bits, m + rtt)
    return win[:, :m].copy(), win[:, m:].copy()


def chronological_split(X, Y, fraction: float):
    cut = int(len(X) * fraction)
    return (X[:cut], Y[:cut]), (X[cut:], Y[cut:])


def round_half_up(p):
    return np.floor(np.asarray(p) + 0.5)


def predict_epsilon(params: PredictorParams, f_vec) -> float:
    p = forward(params, f_vec)
    return float(1.0 - round_half_up(p).sum() / params.rtt)


def mae_per_rtt(params: PredictorParams, X, Y) -> float:
    """Mean |predicted - true| number of delivered slots per window."""
    if len(X) == 0:
        raise ValueError("empty evaluation set")
    p = forward(params, X)
    return float(np.abs(round_half_up(p).sum(axis=1) - np.asarray(Y).sum(axis=1)).mean())


def mean_predictor_mae(bits, m: int, rtt: int, start: int = 0, stop: int | None = None) -> float:
    """MAE of the running-mean baseline over examples ``start..stop-1``.

    For example ``n`` the baseline predicts ``rtt`` times the delivery rate
    of every bit known so far, ``bits[: n + m]``.
    """
    bits = np.asarray(bits, dtype=float)
    n_ex = bits.size - m - rtt + 1
    stop = n_ex if stop is None else stop
    if not 0 <= start < stop <= n_ex:
        raise ValueError("empty evaluation range")
    n = np.arange(start, stop)
    csum = np.concatenate([[0.0], np.cumsum(bits)])
    rate = csum[n + m] / (n + m)
    actual = csum[n + m + rtt] - csum[n + m]
    return float(np.abs(rtt * rate - actual).mean())


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    learning_rate: float = 1e-4
    batch_size: int = 100
    split: float = 0.6
    val_fraction: float = 0.15  # tail of the training portion held out for early stopping
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    hidden: int = HIDDEN
    tied: bool = False

    def __post_init__(self):
        if self.lam <= 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("lam, learning_rate and batch_size must be positive")
        if not 0 < self.split < 1 or not 0 < self.val_fraction < 1:
            raise ValueError("split and val_fraction must lie in (0, 1)")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = math.inf
    test_mae: float = math.nan
    baseline_mae: float = math.nan
    diverged: bool = False


class TrainingDiverged(RuntimeError):
    def __init__(self, report: TrainReport):
        super().__init__(f"non-finite loss after {len(report.train_loss)} epochs")
        self.report = report


def train(bits, m: int, rtt: int, config: TrainConfig = TrainConfig(), verbose: bool = False):
    """Fit a predictor on the first ``config.split`` of a delivery trace.

    Minibatch Adam over the fitting part, early stopping on the MAE of a
    held-out tail of the training portion; the remaining examples form the
    test set reported in ``test_mae``. Returns ``(params, report)``.
    """
    X, Y = make_dataset(bits, m, rtt)
    (Xtr, Ytr), (Xte, Yte) = chronological_split(X, Y, config.split)
    (Xfit, Yfit), (Xval, Yval) = chronological_split(Xtr, Ytr, 1 - config.val_fraction)
    if len(Xfit) == 0 or len(Xval) == 0:
        raise ValueError("trace too short for the requested split")

    rng = make_rng(config.seed)
    params = init_params(m, rtt, rng, hidden=config.hidden, tied=config.tied)
    opt = AdamState()
    report = TrainReport()
    best = params.copy()
    stale = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(Xfit))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            value, grads = backward(params, Xfit[idx], Yfit[idx], config.lam)
            if not math.isfinite(value):
                report.diverged = True
                raise TrainingDiverged(report)
            losses.append(value)
            params = params.with_arrays(adam_step(params.arrays(), grads, opt, config.learning_rate))
        report.train_loss.append(float(np.mean(losses)))
        val = mae_per_rtt(params, Xval, Yval)
        report.val_mae.append(val)
        if verbose:
            print(f"epoch {epoch:3d} loss {report.train_loss[-1]:.4f} val_mae {val:.3f}")
        if val < report.best_val_mae:
            report.best_val_mae, report.best_epoch = val, epoch
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if len(Xte):
        report.test_mae = mae_per_rtt(best, Xte, Yte)
        report.baseline_mae = mean_predictor_mae(bits, m, rtt, start=len(Xtr))
    return best, report


class NeuralPredictor:
    """Erasure-rate provider backed by a trained predictor.

    Only ``2**m`` inputs exist, so estimates are memoised per bit pattern.
    Until ``m`` feedback bits have arrived the prior is returned.
    """

    kind = "deepnp"

    def __init__(self, params: PredictorParams):
        self.params = params
        self._memo: dict[tuple, float] = {}

    def estimate(self, history: FeedbackHistory, slot: int) -> float:
        m = self.params.m
        if len(history) < m:
            return PRIOR
        key = tuple(history.bits[-m:])
        eps = self._memo.get(key)
        if eps is None:
            eps = self._memo[key] = predict_epsilon(self.params, key)
        return eps


def save_params(path: str | Path, params: PredictorParams, config: TrainConfig | None = None) -> None:
    """JSON container; arrays are nested lists in row-major order.

    Floats are written with ``repr`` precision, so loading is lossless.
    """
    doc = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "m": params.m,
        "rtt": params.rtt,
        "hidden": params.hidden,
        "tied": params.tied,
        "gate_order": list(GATES),
        "blocks": [
            {name: arr[k].tolist() for name, arr in params.arrays().items()}
            for k in range(params.W.shape[0])
        ],
        "train_config": asdict(config) if config is not None else None,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_params(path: str | Path) -> PredictorParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a predictor parameter file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")
    arrays = {
        name: np.array([blk[name] for blk in doc["blocks"]], dtype=float)
        for name in PredictorParams.ARRAYS
    }
    return PredictorParams(doc["m"], doc["rtt"], tied=doc["tied"], **arrays)
