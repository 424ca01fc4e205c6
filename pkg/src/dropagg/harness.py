"""Experiment orchestration: config loading, dropout injection, metrics.

A run executes ``rounds`` aggregation rounds over synthetic client
updates and emits one JSON record per round plus a closing summary.
Output is a pure function of the config and seed.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import random
import time
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import accountant, pipeline
from ._toml import TOMLDecodeError, loads
from .noise import colluded_variance
from .protocol import DropPoint, FixedPointEncoder, ProtocolParams, ThreatMode, Variant, make_pki, run_round
from .protocol.client import noise_components
from .protocol.network import SimNetwork

HARNESS_DROP_POINTS = (DropPoint.BEFORE_MASKED_INPUT, DropPoint.BEFORE_UNMASK, DropPoint.BEFORE_SEED_SHARES)


class ConfigError(ValueError):
    """Configuration is malformed, incomplete, or names unknown keys."""


DEFAULT_STAGES = (
    pipeline.StageSpec(1, "c-comp", 2e-5, 5e-4, 1e-3),
    pipeline.StageSpec(2, "comm", 4e-5, 5e-4, 5e-3),
    pipeline.StageSpec(3, "s-comp", 1e-5, 5e-4, 1e-3),
    pipeline.StageSpec(4, "comm", 4e-5, 5e-4, 5e-3),
    pipeline.StageSpec(5, "c-comp", 2e-5, 5e-4, 1e-3),
)


@dataclass(frozen=True)
class BudgetPlan:
    epsilon: float
    delta: float
    gamma: float
    rounds: int


@dataclass(frozen=True)
class DropoutEvent:
    round: int
    client: int
    stage: DropPoint


@dataclass(frozen=True)
class DropoutModel:
    # "none", "rate" (independent per-stage probabilities), "count" (exactly k per round), or "trace"
    model: str = "none"
    rates: tuple = ()            # ((DropPoint, p), ...)
    count: int = 0
    stage: DropPoint = DropPoint.BEFORE_MASKED_INPUT
    events: tuple = ()           # DropoutEvent, ...


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "off"            # off | fixed | auto
    m: int = 1
    m_max: int = pipeline.DEFAULT_M_MAX
    stages: tuple = DEFAULT_STAGES


@dataclass(frozen=True)
class SimConfig:
    variant: Variant = Variant.SECAGG_XNOISE
    threat_mode: ThreatMode = ThreatMode.SEMI_HONEST
    n_sampled: int = 8
    T: int = 0
    T_C: int = 0
    t: int = 5
    d: int = 1000
    bit_width: int = 20
    scale: float = 256.0
    removal_failure: str = "abort"
    sigma_star_sq: float | None = None
    budget: BudgetPlan | None = None
    gamma: float | None = None
    delta: float | None = None
    sensitivity: float = 1.0
    update_bound: float = 1.0
    dropout: DropoutModel = DropoutModel()
    pipeline: PipelineConfig = PipelineConfig()
    rounds: int = 1
    seed: int = 0
    max_delay: float = 0.0
    wall_clock: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
            object.__setattr__(self, "threat_mode", ThreatMode(self.threat_mode))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


# -- config parsing --------------------------------------------------------

_SCHEMA = {
    "": {"seed", "rounds", "protocol", "noise", "accounting", "dropout", "pipeline", "network", "output", "inputs"},
    "protocol": {"variant", "threat_mode", "n_sampled", "T", "T_C", "t", "d", "bit_width", "scale", "removal_failure"},
    "noise": {"sigma_star_sq", "budget"},
    "noise.budget": {"epsilon", "delta", "gamma", "rounds"},
    "accounting": {"gamma", "delta", "sensitivity"},
    "dropout": {"model", "rates", "count", "stage", "events"},
    "dropout.rates": {p.name.lower() for p in HARNESS_DROP_POINTS},
    "dropout.events": {"round", "client", "stage"},
    "pipeline": {"mode", "m", "m_max", "stages"},
    "pipeline.stages": {"id", "resource", "beta1", "beta2", "beta3"},
    "network": {"max_delay"},
    "output": {"wall_clock"},
    "inputs": {"update_bound"},
}


def _check_keys(section: str, table) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    unknown = set(table) - _SCHEMA[section]
    if unknown:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown key(s) at {where}: {', '.join(sorted(unknown))}")
    return table


def _drop_point(value, where) -> DropPoint:
    try:
        p = DropPoint.parse(value)
    except (KeyError, ValueError):
        raise ConfigError(f"{where}: unknown drop stage {value!r}") from None
    if p not in HARNESS_DROP_POINTS:
        allowed = ", ".join(x.name.lower() for x in HARNESS_DROP_POINTS)
        raise ConfigError(f"{where}: drop stage must be one of {allowed}")
    return p


def parse_config(data: dict) -> SimConfig:
    """Build a validated :class:`SimConfig` from a nested mapping."""
    _check_keys("", data)
    kw: dict = {}
    for key in ("seed", "rounds"):
        if key in data:
            kw[key] = data[key]

    proto = _check_keys("protocol", data.get("protocol", {}))
    kw.update(proto)

    noise = _check_keys("noise", data.get("noise", {}))
    if ("sigma_star_sq" in noise) == ("budget" in noise):
        raise ConfigError("[noise] needs exactly one of sigma_star_sq or a [noise.budget] table")
    if "sigma_star_sq" in noise:
        kw["sigma_star_sq"] = float(noise["sigma_star_sq"])
    else:
        b = _check_keys("noise.budget", noise["budget"])
        missing = _SCHEMA["noise.budget"] - set(b)
        if missing:
            raise ConfigError(f"[noise.budget] missing {', '.join(sorted(missing))}")
        kw["budget"] = BudgetPlan(float(b["epsilon"]), float(b["delta"]), float(b["gamma"]), int(b["rounds"]))

    acct = _check_keys("accounting", data.get("accounting", {}))
    kw.update({k: float(v) for k, v in acct.items()})

    drop = _check_keys("dropout", data.get("dropout", {}))
    model = drop.get("model", "none")
    if model not in ("none", "rate", "count", "trace"):
        raise ConfigError(f"[dropout] unknown model {model!r}")
    rates = tuple(
        (_drop_point(k, "[dropout.rates]"), float(v))
        for k, v in sorted(_check_keys("dropout.rates", drop.get("rates", {})).items())
    )
    if any(not 0 <= p <= 1 for _, p in rates):
        raise ConfigError("[dropout.rates] probabilities must lie in [0, 1]")
    events = []
    for ev in drop.get("events", []):
        _check_keys("dropout.events", ev)
        events.append(DropoutEvent(int(ev["round"]), int(ev["client"]), _drop_point(ev["stage"], "[[dropout.events]]")))
    kw["dropout"] = DropoutModel(
        model=model, rates=tuple(sorted(rates)), count=int(drop.get("count", 0)),
        stage=_drop_point(drop.get("stage", "before_masked_input"), "[dropout]"), events=tuple(events),
    )

    pipe = _check_keys("pipeline", data.get("pipeline", {}))
    stages = DEFAULT_STAGES
    if "stages" in pipe:
        try:
            stages = tuple(pipeline.StageSpec.from_record(_check_keys("pipeline.stages", s)) for s in pipe["stages"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"[[pipeline.stages]]: {exc}") from None
    kw["pipeline"] = PipelineConfig(pipe.get("mode", "off"), int(pipe.get("m", 1)),
                                    int(pipe.get("m_max", pipeline.DEFAULT_M_MAX)), stages)

    kw.update(_check_keys("network", data.get("network", {})))
    kw.update(_check_keys("output", data.get("output", {})))
    kw.update(_check_keys("inputs", data.get("inputs", {})))
    try:
        cfg = SimConfig(**kw)
        validate(cfg)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> SimConfig:
    try:
        with open(path, "rb") as fh:
            data = loads(fh.read().decode())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except (TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return parse_config(data)


def validate(cfg: SimConfig) -> None:
    """Cross-field checks; module validators do the rest."""
    if cfg.rounds < 1:
        raise ConfigError("rounds must be positive")
    if (cfg.sigma_star_sq is None) == (cfg.budget is None):
        raise ConfigError("exactly one of sigma_star_sq or budget must be given")
    if cfg.sigma_star_sq is not None and cfg.sigma_star_sq < 0:
        raise ConfigError("sigma_star_sq must be non-negative")
    if cfg.max_delay < 0:
        raise ConfigError("max_delay must be non-negative")
    if cfg.update_bound < 0:
        raise ConfigError("update_bound must be non-negative")
    dm = cfg.dropout
    if dm.model == "count" and not 0 <= dm.count <= cfg.n_sampled:
        raise ConfigError("dropout count must lie in [0, n_sampled]")
    for ev in dm.events:
        if not 1 <= ev.client <= cfg.n_sampled or not 0 <= ev.round < cfg.rounds:
            raise ConfigError(f"dropout event {ev} outside the experiment")
    pc = cfg.pipeline
    if pc.mode not in ("off", "fixed", "auto"):
        raise ConfigError(f"pipeline mode must be off, fixed or auto, not {pc.mode!r}")
    if pc.m < 1 or pc.m_max < 1 or (pc.mode == "fixed" and pc.m > cfg.d):
        raise ConfigError("pipeline chunk counts must be >= 1 and at most d")
    pipeline.validate_workflow(pc.stages)
    if (cfg.gamma is None) != (cfg.delta is None):
        raise ConfigError("[accounting] needs both gamma and delta")
    # Delegates the remaining checks (t, T, T_C, bit width, variant names).
    ProtocolParams(
        n_sampled=cfg.n_sampled, t=cfg.t, d=cfg.d, variant=cfg.variant, threat_mode=cfg.threat_mode,
        T=cfg.T, T_C=cfg.T_C, sigma_star_sq=cfg.sigma_star_sq if cfg.sigma_star_sq is not None else 1.0,
        encoder=FixedPointEncoder(cfg.bit_width, cfg.scale), removal_failure=cfg.removal_failure,
    )
    if cfg.budget is not None:
        accountant.AccountantConfig(cfg.budget.gamma, cfg.budget.rounds, cfg.budget.delta, cfg.budget.epsilon)


# -- dropout ---------------------------------------------------------------

def dropout_trace(cfg: SimConfig, round_index: int) -> dict:
    """Client id -> drop point for one round."""
    dm, ids = cfg.dropout, range(1, cfg.n_sampled + 1)
    rng = random.Random(f"dropout/{cfg.seed}/{round_index}")
    if dm.model == "rate":
        out = {}
        for u in ids:
            for point, p in dm.rates:
                if rng.random() < p:
                    out[u] = point
                    break
        return out
    if dm.model == "count":
        return {u: dm.stage for u in sorted(rng.sample(list(ids), dm.count))}
    if dm.model == "trace":
        return {ev.client: ev.stage for ev in dm.events if ev.round == round_index}
    return {}


# -- metrics ---------------------------------------------------------------

@dataclass
class RoundMetrics:
    round: int
    dropped: int
    survivors: dict
    aborted: bool
    abort_reason: str | None
    checksum: str | None
    analytic_variance: float | None
    empirical_variance: float | None
    target_variance: float
    epsilon: float | None
    epsilon_orig: float | None
    sim_time: float
    sim_time_unpipelined: float
    chunks: int
    under_removed: bool = False
    seed_round: bool = False
    client_aborts: int = 0
    wall_clock: float | None = None
    extra: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        rec = {"type": "round"}
        rec.update({k: v for k, v in vars(self).items() if k != "extra"})
        if self.wall_clock is None:
            rec.pop("wall_clock")
        rec.update(self.extra)
        return rec


def _checksum(vec) -> str | None:
    if vec is None:
        return None
    return hashlib.sha256(np.ascontiguousarray(vec, dtype=np.uint64).tobytes()).hexdigest()[:16]


def _residual(params: ProtocolParams, result) -> np.ndarray:
    R = np.uint64(params.modulus)
    diff = (result.aggregate + (R - result.plaintext_sum)) % R
    return params.encoder.centered(diff).astype(np.float64) / params.encoder.scale


def kept_variance(params: ProtocolParams, result) -> float:
    """Analytic per-coordinate variance of the noise left in the aggregate."""
    comps = noise_components(params)
    survivors = len(result.survivor_sets.get("U3", ()))
    return math.fsum([survivors * math.fsum(comps)] + [-comps[k] for _, k in result.removed])


def effective_variance(params: ProtocolParams, result, kept: float) -> float:
    """Noise that still protects a client if ``T_C`` survivors collude and strip their own parts."""
    if params.T_C == 0:
        return kept
    survivors = len(result.survivor_sets.get("U3", ()))
    if params.xnoise and not result.under_removed:
        return colluded_variance(params.noise_plan(), params.n_sampled - survivors, params.T_C)
    return kept * max(survivors - params.T_C, 0) / survivors if survivors else 0.0


def plan_sigma(cfg: SimConfig) -> float:
    if cfg.sigma_star_sq is not None:
        return cfg.sigma_star_sq
    b = cfg.budget
    acfg = accountant.AccountantConfig(b.gamma, b.rounds, b.delta, b.epsilon, sensitivity=cfg.sensitivity)
    return accountant.plan_noise(acfg)


def _accounting(cfg: SimConfig):
    if cfg.budget is not None:
        gamma, delta = cfg.budget.gamma, cfg.budget.delta
    elif cfg.gamma is not None:
        gamma, delta = cfg.gamma, cfg.delta
    else:
        return None
    return accountant.AccountantConfig(gamma, 1, delta, sensitivity=cfg.sensitivity)


class _Ledger:
    """Incremental cumulative-epsilon tracker (one RDP vector per curve)."""

    def __init__(self, acfg):
        self.acfg = acfg
        self.total = np.zeros(len(acfg.alphas)) if acfg else None
        self._cache: dict = {}

    def add(self, variance: float | None) -> float | None:
        if self.acfg is None:
            return None
        if variance is not None:
            if variance <= 0:
                self.total = self.total + np.inf
            else:
                if variance not in self._cache:
                    curve = accountant.GaussianCurve(math.sqrt(variance), self.acfg.sensitivity)
                    self._cache[variance] = accountant.round_spend(self.acfg, curve).per_round
                self.total = self.total + self._cache[variance]
        return accountant.rdp_to_dp(self.spend(), self.acfg.delta)

    def spend(self):
        return accountant.PrivacySpend(tuple(self.acfg.alphas), self.total, cumulative=self.total)

    def record(self, epsilon) -> dict | None:
        if self.acfg is None:
            return None
        rec = self.spend().as_record()
        rec.update(epsilon=epsilon, delta=self.acfg.delta)
        for key in ("per_round_rdp", "rounds"):
            rec.pop(key)
        return rec


def _pipeline_times(cfg: SimConfig) -> tuple[int, float, float]:
    pc = cfg.pipeline
    base = pipeline.schedule(pc.stages, cfg.d, 1).completion
    if pc.mode == "off":
        return 1, base, base
    m = pc.m if pc.mode == "fixed" else pipeline.optimal_chunks(pc.stages, cfg.d, min(pc.m_max, cfg.d))
    return m, pipeline.schedule(pc.stages, cfg.d, m).completion, base


def _updates(cfg: SimConfig, encoder: FixedPointEncoder, round_index: int) -> dict:
    rng = np.random.default_rng([cfg.seed, round_index, 0x5EED])
    return {
        u: encoder.encode(rng.uniform(-cfg.update_bound, cfg.update_bound, cfg.d))
        for u in range(1, cfg.n_sampled + 1)
    }


def run_experiment(cfg: SimConfig, parallel: bool = False) -> Iterator[dict]:
    """Yield one record per round, then a summary record.

    Aborted rounds are recorded and the run continues with the next round.
    """
    validate(cfg)
    ids = list(range(1, cfg.n_sampled + 1))
    encoder = FixedPointEncoder(cfg.bit_width, cfg.scale)
    try:
        sigma_sq = plan_sigma(cfg)
    except accountant.InfeasibleBudget as exc:
        yield {"type": "summary", "rounds": 0, "aborted": cfg.rounds, "error": f"infeasible plan: {exc}",
               "variance_verdict": "n/a", "epsilon": None, "epsilon_orig": None}
        return
    signing_keys, _ = make_pki(ids, cfg.seed) if cfg.threat_mode == ThreatMode.MALICIOUS else (None, None)
    acfg = _accounting(cfg)
    ledger, ledger_orig = _Ledger(acfg), _Ledger(acfg)
    m, sim_time, sim_base = _pipeline_times(cfg)

    base_params = ProtocolParams(
        n_sampled=cfg.n_sampled, t=cfg.t, d=cfg.d, variant=cfg.variant, threat_mode=cfg.threat_mode,
        T=cfg.T, T_C=cfg.T_C, sigma_star_sq=sigma_sq, encoder=encoder, removal_failure=cfg.removal_failure,
    )
    target = base_params.noise_plan().inflation * sigma_sq if cfg.variant == Variant.SECAGG_XNOISE else sigma_sq
    n_aborted = 0
    emp_sum = ana_sum = se_sq = 0.0
    n_checked = 0
    analytic_ok = True
    eps = eps_orig = None

    for r in range(cfg.rounds):
        params = dataclasses.replace(base_params, round_index=r)
        trace = dropout_trace(cfg, r)
        started = time.perf_counter()
        res = run_round(params, _updates(cfg, encoder, r), trace, seed=cfg.seed, signing_keys=signing_keys,
                        network=SimNetwork(cfg.max_delay, seed=cfg.seed * 1_000_003 + r),
                        parallel=parallel)
        elapsed = time.perf_counter() - started
        sizes = {k: len(v) for k, v in res.survivor_sets.items()}
        analytic = empirical = None
        if res.aborted:
            n_aborted += 1
            eps, eps_orig = ledger.add(None), ledger_orig.add(None)
        else:
            analytic = kept_variance(params, res)
            resid = _residual(params, res)
            empirical = float(np.var(resid, ddof=1)) if cfg.d > 1 else float(resid[0] ** 2)
            if params.xnoise and not res.under_removed and abs(analytic - target) > 1e-9 * max(target, 1.0):
                analytic_ok = False
            emp_sum += empirical
            ana_sum += analytic
            se_sq += 2.0 * analytic ** 2 / max(cfg.d - 1, 1)
            n_checked += 1
            # the released aggregate is charged at the noise it actually carried
            eps = ledger.add(effective_variance(params, res, analytic))
            survivors = sizes.get("U3", 0)
            orig = sigma_sq * survivors / cfg.n_sampled
            if cfg.T_C:
                orig = orig * max(survivors - cfg.T_C, 0) / survivors
            eps_orig = ledger_orig.add(orig)
        yield RoundMetrics(
            round=r, dropped=res.dropped, survivors=sizes, aborted=res.aborted, abort_reason=res.abort_reason,
            checksum=_checksum(res.aggregate), analytic_variance=analytic, empirical_variance=empirical,
            target_variance=target, epsilon=eps, epsilon_orig=eps_orig, sim_time=sim_time,
            sim_time_unpipelined=sim_base, chunks=m, under_removed=res.under_removed, seed_round=res.seed_round,
            client_aborts=len(res.client_aborts), wall_clock=elapsed if cfg.wall_clock else None,
        ).as_record()

    if n_checked:
        z = (emp_sum - ana_sum) / math.sqrt(se_sq) if se_sq > 0 else 0.0
        verdict = "pass" if abs(z) <= 3.0 and analytic_ok else "fail"
    else:
        z, verdict = None, "n/a"
    yield {
        "type": "summary", "rounds": cfg.rounds, "completed": cfg.rounds - n_aborted, "aborted": n_aborted,
        "sigma_star_sq": sigma_sq, "target_variance": target, "epsilon": eps, "epsilon_orig": eps_orig,
        "epsilon_budget": cfg.budget.epsilon if cfg.budget else None,
        "variance_z": z, "variance_verdict": verdict, "accountant": ledger.record(eps), "chunks": m, "pipeline_speedup": sim_base / sim_time,
    }


def _finite(v):
    """Non-finite floats become null so every line is strict JSON."""
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _finite(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_finite(x) for x in v]
    return v


def dumps_record(rec: dict) -> str:
    return json.dumps(_finite(rec), sort_keys=True, allow_nan=False, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_jsonl(records, fh) -> int:
    n = 0
    for rec in records:
        fh.write(dumps_record(rec) + "\n")
        n += 1
    return n


CSV_FIELDS = ("round", "dropped", "aborted", "abort_reason", "analytic_variance", "empirical_variance",
              "target_variance", "epsilon", "epsilon_orig", "sim_time", "sim_time_unpipelined", "chunks",
              "under_removed", "seed_round")


def export_csv(records, fh=None) -> str:
    """Round records flattened to CSV for plotting; returns the text if ``fh`` is None."""
    out = fh or io.StringIO()
    writer = csv.DictWriter(out, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for rec in records:
        if rec.get("type") == "round":
            writer.writerow(rec)
    return out.getvalue() if fh is None else ""


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
