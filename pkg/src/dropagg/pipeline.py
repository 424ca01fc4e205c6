"""Chunked pipelining of the staged aggregation workflow.

Each stage consumes one resource (client compute, network, server compute).
Splitting the update into ``m`` chunks lets stages on different resources
overlap; per-stage latency follows ``beta1 * d/m + beta2 * m + beta3``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

RESOURCES = ("c-comp", "comm", "s-comp")
DEFAULT_M_MAX = 20


class SingularFitError(ValueError):
    """Profile samples do not determine all three latency coefficients."""


@dataclass(frozen=True)
class StageSpec:
    id: int
    resource: str
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0

    def __post_init__(self):
        if self.resource not in RESOURCES:
            raise ValueError(f"unknown resource {self.resource!r}; expected one of {RESOURCES}")
        if min(self.beta1, self.beta2, self.beta3) < 0:
            raise ValueError(f"stage {self.id}: latency coefficients must be non-negative")

    @classmethod
    def from_record(cls, rec: dict) -> "StageSpec":
        unknown = set(rec) - {"id", "resource", "beta1", "beta2", "beta3"}
        if unknown:
            raise ValueError(f"unknown stage keys: {sorted(unknown)}")
        return cls(int(rec["id"]), rec["resource"], float(rec.get("beta1", 0.0)),
                   float(rec.get("beta2", 0.0)), float(rec.get("beta3", 0.0)))


@dataclass(frozen=True)
class ScheduleEntry:
    stage: int
    chunk: int
    resource: str
    begin: float
    finish: float


@dataclass
class PipelinePlan:
    m: int
    d: int
    schedule: list = field(default_factory=list)
    completion: float = 0.0

    def as_records(self) -> list[dict]:
        return [vars(e).copy() for e in self.schedule]

    def to_json(self) -> str:
        return json.dumps({"m": self.m, "d": self.d, "completion": self.completion,
                           "schedule": self.as_records()}, sort_keys=True)


@dataclass(frozen=True)
class ProfileSample:
    d: int
    m: int
    tau: float

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ValueError("profile sample needs d >= 1 and m >= 1")
        if self.tau < 0:
            raise ValueError("observed latency must be non-negative")


def validate_workflow(stages: Sequence[StageSpec]) -> None:
    if not stages:
        raise ValueError("workflow needs at least one stage")
    for a, b in zip(stages, stages[1:]):
        if a.resource == b.resource:
            raise ValueError(f"adjacent stages {a.id} and {b.id} both use {a.resource}")


def stage_latency(stage: StageSpec, d: int, m: int) -> float:
    if d < 1 or m < 1:
        raise ValueError("need d >= 1 and m >= 1")
    return stage.beta1 * d / m + stage.beta2 * m + stage.beta3


def schedule(stages: Sequence[StageSpec], d: int, m: int) -> PipelinePlan:
    """Begin/finish of every (stage, chunk) task under the two precedence rules.

    A task waits for the same chunk's previous stage and for its resource:
    the previous chunk of the same stage, or for chunk 0, the last chunk of
    the nearest earlier stage on that resource.
    """
    validate_workflow(stages)
    tau = [stage_latency(s, d, m) for s in stages]
    finish = [[0.0] * m for _ in stages]
    last_on_resource: dict = {}
    entries = []
    for s, spec in enumerate(stages):
        q = last_on_resource.get(spec.resource)
        for c in range(m):
            o = finish[s - 1][c] if s > 0 else 0.0
            if c > 0:
                r = finish[s][c - 1]
            else:
                r = finish[q][m - 1] if q is not None else 0.0
            b = max(o, r)
            finish[s][c] = b + tau[s]
            entries.append(ScheduleEntry(spec.id, c, spec.resource, b, finish[s][c]))
        last_on_resource[spec.resource] = s
    return PipelinePlan(m=m, d=d, schedule=entries, completion=finish[-1][-1])


def optimal_chunks(stages: Sequence[StageSpec], d: int, m_max: int = DEFAULT_M_MAX) -> int:
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    best_m, best = 1, None
    for m in range(1, m_max + 1):
        t = schedule(stages, d, m).completion
        if best is None or t < best:
            best_m, best = m, t
    return best_m


def fit_betas(samples: Sequence[ProfileSample]) -> tuple[float, float, float]:
    """Least-squares latency coefficients from profiled ``(d, m, tau)`` samples."""
    if len(samples) < 3:
        raise SingularFitError("need at least three samples")
    X = np.array([[s.d / s.m, s.m, 1.0] for s in samples])
    y = np.array([s.tau for s in samples])
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < 3:
        raise SingularFitError("samples do not vary enough in d/m and m to separate the coefficients")
    return tuple(float(c) for c in coef)


def chunk_sizes(d: int, m: int) -> list[int]:
    if not 1 <= m <= d:
        raise ValueError("chunk count must lie in [1, d]")
    base, extra = divmod(d, m)
    return [base + 1] * extra + [base] * (m - extra)


def chunk_and_concat(update: np.ndarray, m: int) -> list[np.ndarray]:
    """Split ``update`` into ``m`` contiguous near-equal chunks (larger ones first)."""
    update = np.asarray(update)
    bounds = np.cumsum([0] + chunk_sizes(len(update), m))
    return [update[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def concat(chunk_sums: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(c) for c in chunk_sums])


def check_schedule(plan: PipelinePlan, stages: Sequence[StageSpec]) -> None:
    """Raise if the plan lets a resource run two tasks at once or reorders a chunk's stages."""
    stage_pos = {s.id: i for i, s in enumerate(stages)}
    by_resource: dict = {}
    by_chunk: dict = {}
    for e in plan.schedule:
        by_resource.setdefault(e.resource, []).append(e)
        by_chunk.setdefault(e.chunk, []).append(e)
    for res, items in by_resource.items():
        items = sorted(items, key=lambda e: (e.begin, e.finish))
        for a, b in zip(items, items[1:]):
            if b.begin < a.finish:
                raise AssertionError(f"{res}: stage {a.stage}/{a.chunk} overlaps stage {b.stage}/{b.chunk}")
    for c, items in by_chunk.items():
        items = sorted(items, key=lambda e: stage_pos[e.stage])
        for a, b in zip(items, items[1:]):
            if b.begin < a.finish:
                raise AssertionError(f"chunk {c}: stage {b.stage} starts before stage {a.stage} finishes")
    if plan.schedule and plan.completion != max(e.finish for e in plan.schedule):
        raise AssertionError("completion is not the latest finish")


def load_stages(path) -> list[StageSpec]:
    """Stages from a JSON list or a TOML file with ``[[stage]]`` tables."""
    text = open(path, "rb").read()
    if str(path).endswith(".toml"):
        from ._toml import loads
        raw = loads(text.decode()).get("stage", [])
    else:
        raw = json.loads(text)
        if isinstance(raw, dict):
            raw = raw.get("stages", [])
    stages = [StageSpec.from_record(r) for r in raw]
    validate_workflow(stages)
    return stages


def load_samples(path) -> list[ProfileSample]:
    """Profile samples from CSV (``d,m,tau`` header) or JSON list of objects."""
    import csv
    path = str(path)
    if path.endswith(".json"):
        rows = json.load(open(path))
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    return [ProfileSample(int(r["d"]), int(r["m"]), float(r["tau"])) for r in rows]
