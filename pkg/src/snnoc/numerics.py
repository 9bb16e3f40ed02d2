"""Saturating fixed-point arithmetic, power-of-two quantization and the core LFSR.

Raw integers are the working representation everywhere in the simulator:
an ``Fx16`` raw is a signed 16-bit integer, an ``FxAcc`` raw a signed 24-bit
integer, both with ``FRAC_BITS`` fractional bits. The small wrapper classes
exist for readable construction and printing; hot paths use the ``sat16`` /
``sat_acc`` helpers on ints or numpy arrays directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

FRAC_BITS = 8
ONE = 1 << FRAC_BITS

FX16_MIN = -(1 << 15)
FX16_MAX = (1 << 15) - 1
ACC_MIN = -(1 << 23)
ACC_MAX = (1 << 23) - 1

MAX_SCALE = 3


class SatCounter:
    """Counts saturation events for diagnostics."""

    def __init__(self) -> None:
        self.events = 0

    def __repr__(self) -> str:
        return f"SatCounter(events={self.events})"


def _clamp(x, lo, hi, counter):
    if isinstance(x, np.ndarray):
        out = np.clip(x, lo, hi)
        if counter is not None:
            counter.events += int(np.count_nonzero(out != x))
        return out
    if x > hi:
        if counter is not None:
            counter.events += 1
        return hi
    if x < lo:
        if counter is not None:
            counter.events += 1
        return lo
    return int(x)


def sat16(x, counter: SatCounter | None = None):
    return _clamp(x, FX16_MIN, FX16_MAX, counter)


def sat_acc(x, counter: SatCounter | None = None):
    return _clamp(x, ACC_MIN, ACC_MAX, counter)


def to_raw(value: float, lo: int = ACC_MIN, hi: int = ACC_MAX) -> int:
    """Round a real value to the nearest raw step, saturating to [lo, hi]."""
    return int(min(max(round(value * ONE), lo), hi))


def to_float(raw) -> float:
    return raw / ONE


@dataclass(frozen=True, order=True)
class Fx16:
    raw: int

    def __post_init__(self):
        if not FX16_MIN <= self.raw <= FX16_MAX:
            raise ValueError(f"Fx16 raw {self.raw} out of range")

    @classmethod
    def from_float(cls, value: float) -> Fx16:
        return cls(to_raw(value, FX16_MIN, FX16_MAX))

    @property
    def value(self) -> float:
        return self.raw / ONE

    def __add__(self, other: Fx16) -> Fx16:
        return fx_add_sat(self, other)

    def __repr__(self) -> str:
        return f"Fx16({self.value})"


@dataclass(frozen=True, order=True)
class FxAcc:
    raw: int

    def __post_init__(self):
        if not ACC_MIN <= self.raw <= ACC_MAX:
            raise ValueError(f"FxAcc raw {self.raw} out of range")

    @classmethod
    def from_float(cls, value: float) -> FxAcc:
        return cls(to_raw(value))

    @property
    def value(self) -> float:
        return self.raw / ONE

    def __add__(self, other: FxAcc) -> FxAcc:
        return fx_add_sat(self, other)

    def __repr__(self) -> str:
        return f"FxAcc({self.value})"


def fx_add_sat(a, b, counter: SatCounter | None = None):
    """Saturating add of two Fx16 or two FxAcc values."""
    if type(a) is not type(b):
        raise TypeError("fx_add_sat operands must share a type")
    if isinstance(a, Fx16):
        return Fx16(sat16(a.raw + b.raw, counter))
    return FxAcc(sat_acc(a.raw + b.raw, counter))


def msb_index(x):
    """Index of the most significant set bit of a positive int (or array of them).

    Array entries that are zero map to -1.
    """
    if isinstance(x, np.ndarray):
        # frexp is exact for integers below 2**53
        _, exp = np.frexp(x.astype(np.float64))
        return np.where(x > 0, exp - 1, -1).astype(np.int64)
    return int(x).bit_length() - 1


def pow2_quantize(q) -> tuple[int, int]:
    """Priority-encode a raw accumulator value into (sign, floor(log2|q|)).

    Returns (0, 0) for q == 0. Accepts an ``FxAcc`` or a raw int.
    """
    raw = q.raw if isinstance(q, FxAcc) else int(q)
    if raw == 0:
        return 0, 0
    sign = 1 if raw > 0 else -1
    return sign, msb_index(abs(raw)) - FRAC_BITS


def pow2_value(e: int) -> Fx16:
    """2**e as Fx16: 1 << e for e >= 0, 1 >> -e otherwise; zero below one LSB."""
    if e < -FRAC_BITS:
        return Fx16(0)
    shift = e + FRAC_BITS
    if shift >= 15:
        return Fx16(FX16_MAX)
    return Fx16(1 << shift)


def pow2_floor(mag):
    """Largest power of two <= mag (raw units, zero for zero), ints or arrays."""
    if isinstance(mag, np.ndarray):
        e = msb_index(mag)
        return np.where(e >= 0, np.left_shift(1, np.maximum(e, 0)), 0).astype(np.int64)
    if mag <= 0:
        return 0
    return 1 << msb_index(mag)


# --- LFSR -------------------------------------------------------------------

LFSR_PERIOD = (1 << 16) - 1
DRAW_STEPS = 16


def lfsr_step(state: int) -> int:
    """One step of the 16-bit Fibonacci LFSR, taps 16, 15, 13, 4."""
    bit = (state ^ (state >> 1) ^ (state >> 3) ^ (state >> 12)) & 1
    return (state >> 1) | (bit << 15)


@lru_cache(maxsize=1)
def _cycle_tables() -> tuple[np.ndarray, np.ndarray]:
    seq = np.empty(LFSR_PERIOD, dtype=np.int64)
    s = 1
    for i in range(LFSR_PERIOD):
        seq[i] = s
        s = lfsr_step(s)
    pos = np.full(1 << 16, -1, dtype=np.int64)
    pos[seq] = np.arange(LFSR_PERIOD)
    return seq, pos


class Prng:
    """16-bit LFSR. Each draw advances the register 16 steps."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        seed &= 0xFFFF
        if seed == 0:
            raise ValueError("LFSR seed must be nonzero")
        self.state = seed

    def copy(self) -> Prng:
        return Prng(self.state)

    def next16(self) -> int:
        s = self.state
        for _ in range(DRAW_STEPS):
            s = lfsr_step(s)
        self.state = s
        return s

    def next16_many(self, n: int) -> np.ndarray:
        """n successive draws, identical to calling next16 n times."""
        if n <= 0:
            return np.empty(0, dtype=np.int64)
        seq, pos = _cycle_tables()
        start = pos[self.state]
        idx = (start + DRAW_STEPS * np.arange(1, n + 1, dtype=np.int64)) % LFSR_PERIOD
        out = seq[idx]
        self.state = int(out[-1])
        return out

    def __repr__(self) -> str:
        return f"Prng(state=0x{self.state:04X})"


def _raw(x) -> int:
    return x.raw if isinstance(x, (Fx16, FxAcc)) else int(x)


def prng_uniform(p: Prng, lo, hi) -> int:
    """Uniform raw value in [lo, hi] (inclusive); advances ``p`` by one draw.

    ``lo`` and ``hi`` may be ``FxAcc`` values or raw ints; the result is raw.
    """
    lo_r, hi_r = _raw(lo), _raw(hi)
    if lo_r > hi_r:
        raise ValueError(f"invalid range: lo {lo_r} > hi {hi_r}")
    return lo_r + p.next16() % (hi_r - lo_r + 1)
