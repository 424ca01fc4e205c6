"""Prime-field arithmetic and Shamir t-out-of-n secret sharing."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

# Mersenne prime 2^127 - 1: wide enough to carry 16-byte seeds and key material.
DEFAULT_PRIME = (1 << 127) - 1
ELEMENT_BYTES = 16


class SharingError(ValueError):
    """Invalid sharing policy or share set."""


class InsufficientSharesError(SharingError):
    pass


@dataclass(frozen=True)
class FieldElement:
    value: int
    p: int = DEFAULT_PRIME

    def __post_init__(self):
        if not 0 <= self.value < self.p:
            object.__setattr__(self, "value", self.value % self.p)

    def _coerce(self, other) -> int:
        if isinstance(other, FieldElement):
            if other.p != self.p:
                raise ValueError("field elements from different fields")
            return other.value
        if isinstance(other, int):
            return other % self.p
        return NotImplemented

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return FieldElement((self.value + o) % self.p, self.p)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return FieldElement((self.value - o) % self.p, self.p)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return FieldElement((o - self.value) % self.p, self.p)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return FieldElement((self.value * o) % self.p, self.p)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement((-self.value) % self.p, self.p)

    def inverse(self) -> FieldElement:
        if self.value == 0:
            raise ZeroDivisionError("zero has no multiplicative inverse")
        return FieldElement(pow(self.value, -1, self.p), self.p)

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return self * FieldElement(o, self.p).inverse()

    def to_bytes(self) -> bytes:
        width = max(ELEMENT_BYTES, (self.p.bit_length() + 7) // 8)
        return self.value.to_bytes(width, "big")

    @classmethod
    def from_bytes(cls, data: bytes, p: int = DEFAULT_PRIME) -> FieldElement:
        value = int.from_bytes(data, "big")
        if value >= p:
            raise ValueError("encoded value outside the field")
        return cls(value, p)


@dataclass(frozen=True)
class SecretShare:
    holder_index: int
    value: FieldElement

    def __post_init__(self):
        if self.holder_index < 1:
            raise SharingError("share index must be >= 1")


@dataclass(frozen=True)
class SharingPolicy:
    threshold: int
    participant_ids: frozenset

    def __init__(self, threshold: int, participant_ids: Iterable[int]):
        object.__setattr__(self, "threshold", int(threshold))
        object.__setattr__(self, "participant_ids", frozenset(int(i) for i in participant_ids))
        self.validate()

    def validate(self) -> None:
        if any(i < 1 for i in self.participant_ids):
            raise SharingError("participant ids must be positive")
        if not 1 <= self.threshold <= len(self.participant_ids):
            raise SharingError(
                f"threshold {self.threshold} invalid for {len(self.participant_ids)} participants"
            )


def field_stream(seed: bytes, count: int, p: int = DEFAULT_PRIME) -> list[int]:
    """Deterministic field elements from ``seed`` (SHA-256 in counter mode)."""
    out = []
    for i in range(count):
        block = hashlib.sha256(b"dropagg/field" + seed + i.to_bytes(8, "big")).digest()
        block += hashlib.sha256(block).digest()
        out.append(int.from_bytes(block, "big") % p)
    return out


def _eval_poly(coeffs: Sequence[int], x: int, p: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % p
    return acc


def share(secret: FieldElement, policy: SharingPolicy, rng_seed: bytes) -> list[SecretShare]:
    """Split ``secret`` into one share per participant; any ``threshold`` rebuild it."""
    policy.validate()
    p = secret.p
    coeffs = [secret.value] + field_stream(rng_seed, policy.threshold - 1, p)
    return [
        SecretShare(i, FieldElement(_eval_poly(coeffs, i, p), p))
        for i in sorted(policy.participant_ids)
    ]


def lagrange_at_zero(indices: Sequence[int], p: int) -> list[int]:
    coeffs = []
    for i in indices:
        num, den = 1, 1
        for j in indices:
            if j != i:
                num = num * j % p
                den = den * (j - i) % p
        coeffs.append(num * pow(den, -1, p) % p)
    return coeffs


def reconstruct(shares: Sequence[SecretShare], t: int) -> FieldElement:
    """Lagrange interpolation at zero using the first ``t`` shares."""
    if t < 1:
        raise SharingError("threshold must be positive")
    indices = [s.holder_index for s in shares]
    if len(set(indices)) != len(indices):
        raise SharingError("duplicate share indices")
    if len(shares) < t:
        raise InsufficientSharesError(f"need {t} shares, got {len(shares)}")
    used = list(shares)[:t]
    p = used[0].value.p
    if any(s.value.p != p for s in used):
        raise SharingError("shares from different fields")
    lam = lagrange_at_zero([s.holder_index for s in used], p)
    return FieldElement(sum(l * s.value.value for l, s in zip(lam, used)) % p, p)
