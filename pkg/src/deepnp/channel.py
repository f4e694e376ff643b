"""Gilbert-Elliott two-state bursty erasure channel."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ParameterError(ValueError):
    pass


class State(enum.IntEnum):
    GOOD = 0
    BAD = 1


@dataclass(frozen=True)
class GEParams:
    e_G: float  # erasure probability in the good state
    e_B: float  # erasure probability in the bad state
    q: float  # P(good -> bad)
    s: float  # P(bad -> good)

    def __post_init__(self):
        for name in ("e_G", "e_B"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name}={v} outside [0, 1]")
        for name in ("q", "s"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ParameterError(f"{name}={v} outside (0, 1)")
        if self.e_G > self.e_B:
            raise ParameterError(f"e_G={self.e_G} exceeds e_B={self.e_B}")


def stationary_distribution(params: GEParams) -> tuple[float, float]:
    total = params.s + params.q
    if total <= 0:
        raise ParameterError("s + q must be positive")
    pi_g = params.s / total
    return pi_g, 1.0 - pi_g


def steady_state_erasure(params: GEParams) -> float:
    pi_g, pi_b = stationary_distribution(params)
    return pi_g * params.e_G + pi_b * params.e_B


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the only RNG algorithm used anywhere in the package."""
    return np.random.Generator(np.random.PCG64(seed))


class GEChannel:
    """Stateful channel realization.

    Each slot draws the erasure from the current state, then transitions.
    The initial state is drawn from the stationary distribution. Draw order
    is one uniform for the initial state, then two per slot (erasure,
    transition), so :meth:`step` and :func:`generate_trace` agree exactly.
    """

    def __init__(self, params: GEParams, seed: int = 0, state: State | None = None):
        self.params = params
        self.rng_seed = seed
        self.rng = make_rng(seed)
        u = self.rng.random()
        if state is None:
            pi_g, _ = stationary_distribution(params)
            state = State.GOOD if u < pi_g else State.BAD
        self.state = State(state)

    def step(self) -> bool:
        u_erase, u_move = self.rng.random(2)
        p = self.params
        if self.state is State.GOOD:
            erased = u_erase < p.e_G
            if u_move < p.q:
                self.state = State.BAD
        else:
            erased = u_erase < p.e_B
            if u_move < p.s:
                self.state = State.GOOD
        return bool(erased)

    def steps(self, n: int) -> np.ndarray:
        """Vectorised equivalent of ``n`` calls to :meth:`step`."""
        u = self.rng.random((n, 2))
        p = self.params
        go_bad = (u[:, 1] < p.q).tolist()
        go_good = (u[:, 1] < p.s).tolist()
        states = [0] * n
        cur = int(self.state)
        for t in range(n):
            states[t] = cur
            if cur == 0:
                if go_bad[t]:
                    cur = 1
            elif go_good[t]:
                cur = 0
        self.state = State(cur)
        thresh = np.where(np.asarray(states) == 0, p.e_G, p.e_B)
        return u[:, 0] < thresh


def generate_trace(params: GEParams, length: int, seed: int) -> np.ndarray:
    """Erasure indicators (True = erased) for ``length`` consecutive slots."""
    if length < 1:
        raise ValueError(f"trace length must be >= 1, got {length}")
    return GEChannel(params, seed).steps(length)


def write_trace(path: str | Path, erased: np.ndarray) -> None:
    """One ASCII char per slot: '1' delivered, '0' erased."""
    text = "".join("0" if e else "1" for e in np.asarray(erased, dtype=bool))
    Path(path).write_text(text + "\n", encoding="ascii")


def read_trace(path: str | Path) -> np.ndarray:
    text = Path(path).read_text(encoding="ascii").rstrip("\n")
    if set(text) - {"0", "1"}:
        raise ValueError(f"{path}: trace may only contain '0' and '1'")
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8) == ord("0")
