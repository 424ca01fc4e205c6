"""Fixed-point encoding of real vectors into Z_R with R = 2**bit_width."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FixedPointEncoder:
    bit_width: int = 20
    scale: float = 256.0

    def __post_init__(self):
        if not 2 <= self.bit_width <= 62:
            raise ValueError("bit width must lie in [2, 62]")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def modulus(self) -> int:
        return 1 << self.bit_width

    def to_ring(self, values) -> np.ndarray:
        """Signed integers (fixed-point units) reduced mod R."""
        v = np.asarray(values, dtype=np.int64)
        return (v % np.int64(self.modulus)).astype(np.uint64)

    def encode(self, x) -> np.ndarray:
        return self.to_ring(np.rint(np.asarray(x, dtype=np.float64) * self.scale))

    def centered(self, v) -> np.ndarray:
        """Representatives in [-R/2, R/2)."""
        v = np.asarray(v, dtype=np.uint64).astype(np.int64)
        half = self.modulus // 2
        return np.where(v >= half, v - self.modulus, v)

    def decode(self, v) -> np.ndarray:
        return self.centered(v).astype(np.float64) / self.scale


def add_mod(a, b, modulus: int) -> np.ndarray:
    m = np.uint64(modulus)
    return (np.asarray(a, dtype=np.uint64) % m + np.asarray(b, dtype=np.uint64) % m) % m


def sub_mod(a, b, modulus: int) -> np.ndarray:
    m = np.uint64(modulus)
    return (np.asarray(a, dtype=np.uint64) % m + (m - np.asarray(b, dtype=np.uint64) % m)) % m
