"""GF(2^8) arithmetic and an incremental sliding-window RLNC decoder.

Only coefficient vectors are tracked; payloads never enter the picture, so
"decoding" a packet means the receiver holds enough independent combinations
to solve for it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POLY = 0x11B
GENERATOR = 0x03  # 0x02 is not primitive modulo 0x11B


def _xtime_mul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= POLY
    return r


def _build_tables():
    exp = np.zeros(510, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int16)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _xtime_mul(x, GENERATOR)
    exp[255:] = exp[:255]
    # full product table: one fancy index per row scaling
    la = log[1:].astype(np.int32)
    mul = np.zeros((256, 256), dtype=np.uint8)
    mul[1:, 1:] = exp[(la[:, None] + la[None, :]) % 255]
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[(255 - la) % 255]
    return exp, log, mul, inv


EXP, LOG, MUL, INV = _build_tables()


def gf_add(a, b):
    """Field addition (XOR). Works on ints and uint8 arrays."""
    return a ^ b


def gf_mul(a, b):
    """Field multiplication via the product table. Works on ints and uint8 arrays."""
    out = MUL[a, b]
    if isinstance(out, np.ndarray):
        return out
    return int(out)


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(INV[a])


def random_coefficients(span: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``span`` coefficients uniformly from the nonzero field elements.

    Every packet in the window therefore participates in the combination,
    which also guarantees the vector is not all zero.
    """
    if span < 1:
        raise ValueError(f"span must be >= 1, got {span}")
    return rng.integers(1, 256, size=span, dtype=np.uint8)


@dataclass(frozen=True)
class CodedCombination:
    """One degree of freedom: random coefficients over packets w_min..w_max."""

    w_min: int
    w_max: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.w_min > self.w_max:
            raise ValueError(f"empty window [{self.w_min}, {self.w_max}]")
        if len(self.coeffs) != self.w_max - self.w_min + 1:
            raise ValueError("coefficient count does not match window span")
        if not np.any(self.coeffs):
            raise ValueError("all-zero combination")

    @property
    def span(self) -> int:
        return self.w_max - self.w_min + 1


def unit_combination(index: int) -> CodedCombination:
    return CodedCombination(index, index, np.ones(1, dtype=np.uint8))


class DecoderError(Exception):
    pass


@dataclass
class DecoderMatrix:
    """Echelon rows keyed by their highest nonzero column.

    Keying rows by the *highest* column makes in-order decodability a pure
    pivot check: packets ``base_index..h-1`` are solvable iff every one of
    them owns a pivot row, because each such row is supported on
    ``[base_index, pivot]``.

    Rows are uint8 arrays indexed from ``base_index`` and normalized so the
    pivot coefficient is 1. Call :meth:`advance` to drop solved packets.
    """

    base_index: int = 0
    rows: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return len(self.rows)

    def absorb(self, comb: CodedCombination) -> bool:
        if comb.w_min < self.base_index:
            raise DecoderError(
                f"combination starts at {comb.w_min}, before base {self.base_index}"
            )
        off = comb.w_min - self.base_index
        v = np.zeros(off + comb.span, dtype=np.uint8)
        v[off:] = comb.coeffs
        return self._eliminate(v)

    def _eliminate(self, v: np.ndarray) -> bool:
        nz = np.flatnonzero(v)
        while nz.size:
            p = int(nz[-1])
            row = self.rows.get(p + self.base_index)
            if row is None:
                v = v[: p + 1]
                self.rows[p + self.base_index] = MUL[INV[v[p]], v]
                return True
            v = v[:p] ^ MUL[v[p], row[:p]]
            nz = np.flatnonzero(v)
        return False

    def decoded_prefix(self) -> int:
        h = self.base_index
        while h in self.rows:
            h += 1
        return h

    def advance(self) -> int:
        """Retire the in-order decoded prefix; returns the new base index."""
        h = self.decoded_prefix()
        shift = h - self.base_index
        if shift:
            for p in range(self.base_index, h):
                del self.rows[p]
            # solved packets are known, so their columns can be dropped
            self.rows = {p: r[shift:] for p, r in self.rows.items()}
            self.base_index = h
        return h


def restrict(comb: CodedCombination, base: int) -> CodedCombination | None:
    """Drop columns of already-decoded packets; None when nothing is left."""
    if comb.w_min >= base:
        return comb
    if comb.w_max < base:
        return None
    coeffs = comb.coeffs[base - comb.w_min :]
    if not np.any(coeffs):
        return None
    return CodedCombination(base, comb.w_max, coeffs)
