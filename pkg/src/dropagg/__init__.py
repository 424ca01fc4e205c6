"""Dropout-resilient secure aggregation with distributed DP noise."""
from .kernels import BACKEND  # noqa: F401
from .field import FieldElement, SecretShare, SharingPolicy, reconstruct, share  # noqa: F401
from .noise import NoisePlan, component_variances, excess_level, per_survivor_excess  # noqa: F401
from .accountant import AccountantConfig, GaussianCurve, plan_noise, rdp_to_dp, spend_trace  # noqa: F401
from .pipeline import StageSpec, fit_betas, optimal_chunks, schedule, stage_latency  # noqa: F401
from .protocol import ProtocolParams, ThreatMode, Variant, run_round  # noqa: F401

__version__ = "0.1.0"
