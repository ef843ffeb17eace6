"""Two's-complement fixed-point formats and integer tensors.

All values flowing through the functional datapath models are raw signed
integers tagged with a FixedPointFormat. Quantization rounds to nearest-even
and saturates (never wraps); total width is capped at 16 bits to match the
baseline datapath.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_TOTAL_BITS = 16


@dataclass(frozen=True)
class FixedPointFormat:
    """A signed fixed-point format with `total_bits` bits, `frac_bits` of them fractional."""

    total_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self):
        if not (1 <= self.total_bits <= MAX_TOTAL_BITS):
            raise ValueError(f"total_bits must be in 1..{MAX_TOTAL_BITS}, got {self.total_bits}")
        if not (0 <= self.frac_bits <= self.total_bits):
            raise ValueError(f"frac_bits must be in 0..total_bits, got {self.frac_bits}")
        if not self.signed:
            raise ValueError("only signed formats are supported")

    @property
    def min_raw(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_raw(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def scale(self) -> int:
        """Raw units per 1.0."""
        return 1 << self.frac_bits

    def contains(self, raw: int) -> bool:
        return self.min_raw <= raw <= self.max_raw

    def saturate(self, raw: int) -> int:
        return min(max(raw, self.min_raw), self.max_raw)

    def __str__(self):
        return f"Q{self.total_bits}.{self.frac_bits}"


def quantize(value: float, fmt: FixedPointFormat) -> int:
    """Round `value` to the nearest raw integer (ties to even), saturating to the format range."""
    scaled = value * fmt.scale
    # Python round() is round-half-to-even on floats.
    raw = round(scaled)
    return fmt.saturate(raw)


def dequantize(raw: int, fmt: FixedPointFormat) -> float:
    return raw / fmt.scale


def quantize_array(values: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    """Vectorized quantize; returns int64 array."""
    raw = np.rint(np.asarray(values, dtype=np.float64) * fmt.scale)
    return np.clip(raw, fmt.min_raw, fmt.max_raw).astype(np.int64)


def dequantize_array(raw: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / fmt.scale


def bit_of(raw: int, k: int, fmt: FixedPointFormat) -> int:
    """Bit k of the two's-complement representation of `raw` truncated to total_bits."""
    if not (0 <= k < fmt.total_bits):
        raise ValueError(f"bit index {k} out of range for {fmt}")
    return (raw >> k) & 1


def bits_of(raw, fmt: FixedPointFormat) -> np.ndarray:
    """All total_bits bits (LSB first) of `raw`, which may be an array."""
    raw = np.asarray(raw, dtype=np.int64)
    shifts = np.arange(fmt.total_bits, dtype=np.int64)
    return (raw[..., None] >> shifts) & 1


def _round_shift_right_even(raw: int, shift: int) -> int:
    """Arithmetic right shift by `shift` with round-half-to-even."""
    if shift <= 0:
        return raw << -shift
    denom = 1 << shift
    q, rem = divmod(raw, denom)  # floor division; rem >= 0
    half = denom >> 1
    if rem > half or (rem == half and (q & 1)):
        q += 1
    return q


def _round_shift_right_even_array(raw: np.ndarray, shift: int) -> np.ndarray:
    if shift <= 0:
        return raw << -shift
    denom = np.int64(1) << shift
    q = raw >> shift
    rem = raw - (q << shift)
    half = denom >> 1
    round_up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + round_up.astype(np.int64)


def requantize(raw: int, old: FixedPointFormat, new: FixedPointFormat) -> int:
    """Re-express `raw` from format `old` in format `new`, rounding to even and saturating."""
    shifted = _round_shift_right_even(raw, old.frac_bits - new.frac_bits)
    return new.saturate(shifted)


@dataclass
class FixedPointTensor:
    """An integer tensor whose elements all fit the attached format."""

    data: np.ndarray
    format: FixedPointFormat

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        lo, hi = self.data.min(initial=0), self.data.max(initial=0)
        if lo < self.format.min_raw or hi > self.format.max_raw:
            raise ValueError(f"tensor values [{lo}, {hi}] exceed range of {self.format}")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @classmethod
    def from_real(cls, values, fmt: FixedPointFormat) -> "FixedPointTensor":
        return cls(quantize_array(np.asarray(values), fmt), fmt)

    def to_real(self) -> np.ndarray:
        return dequantize_array(self.data, self.format)


def requantize_tensor(t: FixedPointTensor, new_format: FixedPointFormat) -> FixedPointTensor:
    """Re-round/saturate every element of `t` into `new_format`."""
    shifted = _round_shift_right_even_array(t.data, t.format.frac_bits - new_format.frac_bits)
    clipped = np.clip(shifted, new_format.min_raw, new_format.max_raw)
    return FixedPointTensor(clipped, new_format)
