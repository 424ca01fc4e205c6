"""Add-then-remove noise bookkeeping.

Each sampled client splits its noise share into ``T + 1`` components; once
the dropout count ``|D|`` is known, the components with index above
``|D|`` are subtracted from the aggregate so that exactly the target
variance remains.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class ToleranceExceeded(ValueError):
    """More clients dropped than the plan tolerates; the round must abort."""


@dataclass(frozen=True)
class NoisePlan:
    sigma_star_sq: float
    n_sampled: int
    T: int
    T_C: int = 0
    t: int | None = None
    # overrides t / (t - T_C) when given
    inflation_factor: float | None = None

    def __post_init__(self):
        if self.sigma_star_sq < 0:
            raise ValueError("target variance must be non-negative")
        if not 0 <= self.T < self.n_sampled:
            raise ValueError(f"need 0 <= T < |U|, got T={self.T}, |U|={self.n_sampled}")
        if self.T_C:
            if self.t is None:
                raise ValueError("collusion tolerance needs the SecAgg threshold t")
            if not 0 <= self.T_C < self.t <= self.n_sampled:
                raise ValueError(f"need 0 <= T_C < t <= |U|, got T_C={self.T_C}, t={self.t}")
        elif self.t is not None and not 1 <= self.t <= self.n_sampled:
            raise ValueError("threshold t outside [1, |U|]")
        if self.inflation_factor is not None and not self.inflation_factor >= 1:
            raise ValueError("inflation factor must be >= 1")

    @property
    def inflation(self) -> float:
        if self.inflation_factor is not None:
            return self.inflation_factor
        if not self.T_C:
            return 1.0
        return self.t / (self.t - self.T_C)

    @property
    def n_components(self) -> int:
        return self.T + 1


def component_variances(plan: NoisePlan) -> list[float]:
    """Variances of the ``T + 1`` noise components every client adds."""
    n, s = plan.n_sampled, plan.sigma_star_sq * plan.inflation
    return [s / n] + [s / ((n - k + 1) * (n - k)) for k in range(1, plan.T + 1)]


def _check_dropped(plan: NoisePlan, dropped: int) -> None:
    if dropped < 0:
        raise ValueError("dropout count must be non-negative")
    if dropped > plan.T:
        raise ToleranceExceeded(f"{dropped} dropouts exceed tolerance T={plan.T}")


def excess_level(plan: NoisePlan, dropped: int) -> float:
    """Total variance the server has to strip from the aggregate."""
    _check_dropped(plan, dropped)
    return (plan.T - dropped) / (plan.n_sampled - plan.T) * plan.sigma_star_sq * plan.inflation


def per_survivor_excess(plan: NoisePlan, dropped: int) -> float:
    _check_dropped(plan, dropped)
    n = plan.n_sampled
    return plan.sigma_star_sq * plan.inflation * (1.0 / (n - plan.T) - 1.0 / (n - dropped))


def removal_indices(dropped: int, T: int) -> range:
    if not 0 <= dropped <= T:
        raise ToleranceExceeded(f"{dropped} dropouts outside [0, {T}]")
    return range(dropped + 1, T + 1)


def verify_aggregate_variance(plan: NoisePlan, dropped: int) -> float:
    """Variance left after removal, from the per-component bookkeeping."""
    _check_dropped(plan, dropped)
    v = component_variances(plan)
    survivors = plan.n_sampled - dropped
    removed = math.fsum(v[k] for k in removal_indices(dropped, plan.T))
    return survivors * math.fsum(v) - survivors * removed


def colluded_variance(plan: NoisePlan, dropped: int, colluders: int) -> float:
    """Variance left when ``colluders`` surviving clients also reveal their own noise."""
    _check_dropped(plan, dropped)
    if colluders > plan.n_sampled - dropped:
        raise ValueError("more colluders than survivors")
    v = component_variances(plan)
    kept_per_client = math.fsum(v) - math.fsum(v[k] for k in removal_indices(dropped, plan.T))
    return (plan.n_sampled - dropped - colluders) * kept_per_client


def orig_variance(sigma_star_sq: float, n_sampled: int, dropped: int) -> float:
    """Aggregate variance under plain per-client noise ``sigma^2 / |U|`` with ``dropped`` missing."""
    if not 0 <= dropped <= n_sampled:
        raise ValueError("dropout count outside [0, |U|]")
    return sigma_star_sq * (n_sampled - dropped) / n_sampled
