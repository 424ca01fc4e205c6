from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ..field import DEFAULT_PRIME
from ..noise import NoisePlan
from .encoding import FixedPointEncoder


class ThreatMode(str, Enum):
    SEMI_HONEST = "semi_honest"
    MALICIOUS = "malicious"


class Variant(str, Enum):
    SECAGG_PLAIN = "secagg_plain"
    SECAGG_XNOISE = "secagg_xnoise"


class ProtocolAbort(Exception):
    """A party stopped the round."""

    def __init__(self, reason: str, party: int | None = None, stage: int | None = None):
        super().__init__(reason)
        self.reason = reason
        self.party = party
        self.stage = stage


@dataclass(frozen=True)
class ProtocolParams:
    n_sampled: int
    t: int
    d: int
    variant: Variant = Variant.SECAGG_XNOISE
    threat_mode: ThreatMode = ThreatMode.SEMI_HONEST
    T: int = 0
    T_C: int = 0
    sigma_star_sq: float = 0.0
    round_index: int = 0
    encoder: FixedPointEncoder = field(default_factory=FixedPointEncoder)
    prime: int = DEFAULT_PRIME
    # "abort" or "emit": what the server does when seed shares cannot be reconstructed
    removal_failure: str = "abort"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "threat_mode", ThreatMode(self.threat_mode))
        if not 1 <= self.t <= self.n_sampled:
            raise ValueError(f"threshold t={self.t} outside [1, {self.n_sampled}]")
        if self.d < 1:
            raise ValueError("vector length must be positive")
        if self.removal_failure not in ("abort", "emit"):
            raise ValueError("removal_failure must be 'abort' or 'emit'")
        if self.xnoise:
            self.noise_plan()

    @property
    def xnoise(self) -> bool:
        return self.variant is Variant.SECAGG_XNOISE

    @property
    def malicious(self) -> bool:
        return self.threat_mode is ThreatMode.MALICIOUS

    @property
    def modulus(self) -> int:
        return self.encoder.modulus

    def noise_plan(self) -> NoisePlan:
        return NoisePlan(self.sigma_star_sq, self.n_sampled, self.T, self.T_C, self.t)

    def removal_start(self, n_survivors: int) -> int:
        """First removed component index given |U3| survivors."""
        return self.n_sampled - n_survivors + 1
