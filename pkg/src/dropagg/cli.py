"""Command-line entry point: ``dropagg run | plan-noise | plan-pipeline | fit-betas``."""
from __future__ import annotations

import argparse
import json
import sys

from . import accountant, harness, pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def _run(args) -> int:
    try:
        cfg = harness.load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
            harness.validate(cfg)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    records = list(harness.run_experiment(cfg, parallel=args.mode == "parallel"))
    if args.out:
        with open(args.out, "w") as fh:
            harness.write_jsonl(records, fh)
    else:
        harness.write_jsonl(records, sys.stdout)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            harness.export_csv(records, fh)
    summary = records[-1]
    return EXIT_INFEASIBLE if "error" in summary else EXIT_OK


def _plan_noise(args) -> int:
    try:
        cfg = accountant.AccountantConfig(args.gamma, args.rounds, args.delta, args.epsilon,
                                          sensitivity=args.sensitivity)
    except ValueError as exc:
        print(f"invalid budget: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        var = accountant.plan_noise(cfg)
    except accountant.InfeasibleBudget as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    sigma = var ** 0.5
    print(harness.dumps_record({
        "sigma_star_sq": var, "sigma": sigma, "epsilon": accountant.epsilon_for_sigma(cfg, sigma),
        "epsilon_budget": args.epsilon, "delta": args.delta, "gamma": args.gamma, "rounds": args.rounds,
    }))
    return EXIT_OK


def _plan_pipeline(args) -> int:
    try:
        stages = pipeline.load_stages(args.stages)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"invalid stages: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.d < 1 or args.m_max < 1:
        print("d and m-max must be positive", file=sys.stderr)
        return EXIT_CONFIG
    m = pipeline.optimal_chunks(stages, args.d, min(args.m_max, args.d))
    plan = pipeline.schedule(stages, args.d, m)
    base = pipeline.schedule(stages, args.d, 1).completion
    print(harness.dumps_record({
        "m": m, "d": args.d, "completion": plan.completion, "completion_m1": base,
        "speedup": base / plan.completion, "schedule": plan.as_records(),
    }))
    if args.timeline:
        for e in plan.schedule:
            print(f"# stage {e.stage:>2} chunk {e.chunk:>2} {e.resource:<7} {e.begin:12.6f} -> {e.finish:12.6f}")
    return EXIT_OK


def _fit_betas(args) -> int:
    try:
        samples = pipeline.load_samples(args.samples)
        b1, b2, b3 = pipeline.fit_betas(samples)
    except pipeline.SingularFitError as exc:
        print(f"singular fit: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"invalid samples: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(harness.dumps_record({"beta1": b1, "beta2": b2, "beta3": b3, "samples": len(samples)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dropagg", description="Dropout-resilient secure aggregation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a TOML config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="JSON-lines output path (default: stdout)")
    run.add_argument("--csv", help="also write a plot-ready CSV of the round records")
    run.add_argument("--mode", choices=("sequential", "parallel"), default="sequential")
    run.set_defaults(fn=_run)

    pn = sub.add_parser("plan-noise", help="minimum aggregate noise variance for a privacy budget")
    pn.add_argument("--epsilon", type=float, required=True)
    pn.add_argument("--delta", type=float, required=True)
    pn.add_argument("--gamma", type=float, required=True)
    pn.add_argument("--rounds", type=int, required=True)
    pn.add_argument("--sensitivity", type=float, default=1.0)
    pn.set_defaults(fn=_plan_noise)

    pp = sub.add_parser("plan-pipeline", help="optimal chunk count and schedule for a staged workflow")
    pp.add_argument("--stages", required=True, help="JSON list or TOML [[stage]] tables")
    pp.add_argument("--d", type=int, required=True)
    pp.add_argument("--m-max", type=int, default=pipeline.DEFAULT_M_MAX)
    pp.add_argument("--timeline", action="store_true", help="append a text timeline")
    pp.set_defaults(fn=_plan_pipeline)

    fb = sub.add_parser("fit-betas", help="fit latency coefficients from profiled samples")
    fb.add_argument("--samples", required=True, help="CSV with d,m,tau columns or a JSON list")
    fb.set_defaults(fn=_fit_betas)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
