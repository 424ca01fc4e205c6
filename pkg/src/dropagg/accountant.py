"""Rényi-DP accounting under heterogeneous Poisson client sampling.

Per-round loss comes from the sampled-mechanism bound ``F(gamma)``;
rounds compose additively; the total is translated to (epsilon, delta)
by minimizing over the integer order grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

DEFAULT_ALPHAS = tuple(range(2, 257))
SIGMA_BOUNDS = (1e-2, 1e4)


class InfeasibleBudget(ValueError):
    """No noise level in the search range meets the privacy budget."""


@dataclass(frozen=True)
class GaussianCurve:
    """RDP curve of the Gaussian mechanism: eps(alpha) = alpha * sens^2 / (2 sigma^2)."""
    sigma: float
    sensitivity: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("noise multiplier must be positive")

    def __call__(self, alpha: float) -> float:
        return alpha * self.sensitivity ** 2 / (2.0 * self.sigma ** 2)


RdpCurve = Callable[[float], float]


@dataclass(frozen=True)
class AccountantConfig:
    gamma: float
    rounds: int
    delta: float
    epsilon: float = math.inf
    alphas: tuple = DEFAULT_ALPHAS
    sensitivity: float = 1.0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("sampling bound gamma must lie in [0, 1)")
        if self.rounds < 1:
            raise ValueError("rounds must be positive")
        _check_delta(self.delta)
        if not self.epsilon > 0:
            raise ValueError("epsilon budget must be positive")
        if not self.alphas or any(int(a) != a or a < 2 for a in self.alphas):
            raise ValueError("orders must be integers >= 2")


@dataclass
class PrivacySpend:
    alphas: tuple
    per_round: np.ndarray
    rounds: int = 1
    cumulative: np.ndarray = field(default=None)
    epsilon: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.cumulative is None:
            self.cumulative = self.rounds * np.asarray(self.per_round, dtype=float)

    def as_record(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "per_round_rdp": [float(x) for x in self.per_round],
            "cumulative_rdp": [float(x) for x in self.cumulative],
            "rounds": self.rounds,
            "epsilon": self.epsilon,
            "delta": self.delta,
        }


def _check_delta(delta: float) -> None:
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")


def _log_binom(n: int, k: int) -> float:
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def _curve_values(curve: RdpCurve, orders: np.ndarray) -> np.ndarray:
    try:
        values = np.asarray(curve(orders), dtype=float)
        if values.shape == orders.shape:
            return values
    except (TypeError, ValueError):
        pass
    return np.array([float(curve(float(a))) for a in orders])


def hetero_poisson_bound(alpha: int, gamma: float, curve: RdpCurve) -> float:
    """Upper bound on the order-``alpha`` RDP of ``curve`` under sampling rates <= ``gamma``."""
    if int(alpha) != alpha or alpha < 2:
        raise ValueError("alpha must be an integer >= 2")
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    alpha = int(alpha)
    if gamma == 0:
        return 0.0
    lg, l1g = math.log(gamma), math.log1p(-gamma)
    head = [
        (alpha - 1) * l1g + math.log1p((alpha - 1) * gamma),
        _log_binom(alpha, 2) + 2 * lg + (alpha - 2) * l1g + float(curve(2)),
    ]
    l = np.arange(3, alpha + 1, dtype=float)
    if l.size:
        log_binom = gammaln(alpha + 1) - gammaln(l + 1) - gammaln(alpha - l + 1)
        tail = math.log(3.0) + log_binom + (alpha - l) * l1g + l * lg + (l - 1) * _curve_values(curve, l)
        terms = np.concatenate([head, tail])
    else:
        terms = np.array(head)
    return max(float(logsumexp(terms)) / (alpha - 1), 0.0)


def round_spend(config: AccountantConfig, curve: RdpCurve) -> PrivacySpend:
    per_round = np.array([hetero_poisson_bound(a, config.gamma, curve) for a in config.alphas])
    return PrivacySpend(tuple(config.alphas), per_round, rounds=1)


def compose(per_round: PrivacySpend, rounds: int) -> PrivacySpend:
    if rounds < 1:
        raise ValueError("rounds must be positive")
    base = np.asarray(per_round.per_round, dtype=float)
    return PrivacySpend(per_round.alphas, base, rounds=rounds, cumulative=rounds * base)


def rdp_to_dp(spend: PrivacySpend, delta: float) -> float:
    """Smallest epsilon over the order grid: RDP(alpha) + log(1/delta)/(alpha-1)."""
    _check_delta(delta)
    alphas = np.asarray(spend.alphas, dtype=float)
    eps = np.asarray(spend.cumulative, dtype=float) + math.log(1.0 / delta) / (alphas - 1.0)
    return float(eps.min())


def epsilon_for_sigma(config: AccountantConfig, sigma: float) -> float:
    curve = GaussianCurve(sigma, config.sensitivity)
    return rdp_to_dp(compose(round_spend(config, curve), config.rounds), config.delta)


def plan_noise(config: AccountantConfig, bounds=SIGMA_BOUNDS, max_iter: int = 200, rtol: float = 1e-6) -> float:
    """Smallest aggregate noise variance whose ``rounds``-fold spend fits ``(epsilon, delta)``.

    Bisection over the Gaussian noise standard deviation; returns sigma^2.
    """
    lo, hi = bounds
    if epsilon_for_sigma(config, lo) <= config.epsilon:
        return lo * lo
    if epsilon_for_sigma(config, hi) > config.epsilon:
        raise InfeasibleBudget(
            f"epsilon={config.epsilon} unreachable with sigma <= {hi} (gamma={config.gamma}, rounds={config.rounds})"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if epsilon_for_sigma(config, mid) <= config.epsilon:
            hi = mid
        else:
            lo = mid
        if hi - lo <= rtol * hi * 1e-3:
            break
    return hi * hi


def spend_trace(config: AccountantConfig, per_round_variance: Sequence[float | None]) -> list[float]:
    """Cumulative epsilon after each round given the noise variance each round actually carried.

    ``None`` marks a round that released nothing and costs no privacy.
    """
    out = []
    total = np.zeros(len(config.alphas))
    cache: dict = {}
    for var in per_round_variance:
        if var is not None:
            if var <= 0:
                total = total + np.inf
            else:
                if var not in cache:
                    curve = GaussianCurve(math.sqrt(var), config.sensitivity)
                    cache[var] = round_spend(config, curve).per_round
                total = total + cache[var]
        spend = PrivacySpend(tuple(config.alphas), total, cumulative=total)
        out.append(rdp_to_dp(spend, config.delta))
    return out
