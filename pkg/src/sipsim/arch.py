"""Chip/tile geometry shared by the functional, timing, and energy models."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Engine(str, Enum):
    DADN = "dadn"   # bit-parallel baseline
    STR = "str"     # bit-serial activations, conv layers only
    TRT = "trt"     # bit-serial activations and fc weight loading

    @classmethod
    def parse(cls, text: str) -> "Engine":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown engine {text!r}; expected one of "
                             f"{[e.value for e in cls]}") from None


@dataclass(frozen=True)
class ArchConfig:
    """Tile and chip geometry.

    The serial tile is a grid of `filters_per_tile` x `columns_per_tile` SIP
    units; columns shrink as more activation bits are processed per cycle so
    the per-tile input bit bandwidth matches the 16-bit parallel baseline.
    """

    brick_size: int = 16
    filters_per_tile: int = 16
    tiles: int = 16
    bits_per_cycle: int = 1
    base_precision: int = 16
    columns_per_tile: int = field(default=0)

    def __post_init__(self):
        if self.bits_per_cycle not in (1, 2, 4, 8, 16):
            raise ValueError(f"bits_per_cycle must be a power of two <= 16, "
                             f"got {self.bits_per_cycle}")
        if self.columns_per_tile == 0:
            object.__setattr__(self, "columns_per_tile", 16 // self.bits_per_cycle)
        if self.columns_per_tile * self.bits_per_cycle != 16:
            raise ValueError("columns_per_tile * bits_per_cycle must equal 16")
        if self.brick_size < 1 or self.filters_per_tile < 1 or self.tiles < 1:
            raise ValueError("geometry fields must be positive")

    @property
    def sips_per_tile(self) -> int:
        return self.filters_per_tile * self.columns_per_tile

    @property
    def chip_sips(self) -> int:
        return self.sips_per_tile * self.tiles

    @property
    def chip_filter_slots(self) -> int:
        """Filters processed concurrently chip-wide (one per SIP row)."""
        return self.filters_per_tile * self.tiles

    def slices(self, precision: int) -> int:
        """Cycles to stream `precision` bits at bits_per_cycle each."""
        return -(-precision // self.bits_per_cycle)


DEFAULT_ARCH = ArchConfig()
TWO_BIT_ARCH = ArchConfig(bits_per_cycle=2)
