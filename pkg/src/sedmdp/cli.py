"""Command line entry point: ``sedmdp [--seed N] [--out DIR] [--threads N] <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import BudgetExceededError, ConfigError, DomainError, ValidationError
from .harness import ExperimentConfig, parse_delay, resolve_env, run_experiment
from .mdp import MarkovPolicy, uniform_policy
from .oracles import EnumerationBudget, augmented_vi, enumerate_histories, total_mass
from .sed import SedConfig
from .verification import SUITES, run_suite


def _global_flags(parser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="master seed")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sedmdp", description="Stochastic execution-delay MDP toolkit")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run an experiment config")
    run.add_argument("--config", required=True)

    verify = sub.add_parser("verify", parents=[common], help="run a self-check battery")
    verify.add_argument("suite", choices=SUITES)

    solve = sub.add_parser("solve-augmented", parents=[common], help="constant-delay augmented value iteration")
    solve.add_argument("--env", required=True, help="builtin name or MDP document path")
    solve.add_argument("--M", type=int, required=True)
    solve.add_argument("--tol", type=float, default=1e-9)

    enum = sub.add_parser("enumerate", parents=[common], help="exact history probabilities")
    enum.add_argument("--config", required=True)
    enum.add_argument("--horizon", type=int, required=True)
    enum.add_argument("--budget", type=int, default=2_000_000)
    return parser


def _write_json(out, name, payload) -> None:
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / name).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    result = run_experiment(cfg, threads=args.threads)
    for agent, stats in result.summary()["agents"].items():
        print(f"{agent:16s} episodes={stats['episodes']:5d} mean_return={stats['mean_return']:.4f} "
              f"mean_discounted={stats['mean_discounted_return']:.4f} interactions={stats['interactions']}")
    if cfg.out:
        print(f"wrote {cfg.out}")
    return 0


def cmd_verify(args) -> int:
    kwargs = {} if args.seed is None or args.suite in ("queues", "theorem2") else {"seed": args.seed}
    checks = run_suite(args.suite, **kwargs)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{args.suite}: {len(checks) - failed}/{len(checks)} checks passed")
    _write_json(args.out, f"verify_{args.suite}.json",
                [{"name": c.name, "measured": c.measured, "tolerance": c.tolerance, "passed": c.passed}
                 for c in checks])
    return 1 if failed else 0


def cmd_solve(args) -> int:
    mdp = resolve_env(args.env)
    sol = augmented_vi(mdp, args.M, tol=args.tol)
    report = {
        "env": mdp.name or str(args.env),
        "M": args.M,
        "tol": args.tol,
        "augmented_states": sol.n_augmented_states,
        "iterations": len(sol.residuals),
        "final_residual": sol.residuals[-1] if sol.residuals else 0.0,
        "initial_value": sol.initial_value(mdp.mu),
        "per_state": [
            {"s": s, "value": float(sol.values[s].max()), "best_queue": list(sol.best_queue(s))}
            for s in range(mdp.n_states)
        ],
    }
    print(f"{report['env']} M={args.M}: initial value {report['initial_value']:.10f} "
          f"({report['augmented_states']} augmented states, {report['iterations']} sweeps)")
    _write_json(args.out, "augmented.json", report)
    return 0


def load_enumeration_config(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load {path}: {exc}") from None
    if not isinstance(doc, dict) or "env" not in doc or "delay" not in doc:
        raise ConfigError("enumeration config needs 'env' and 'delay'")
    env = doc["env"]
    if isinstance(env, dict) and "path" in env:
        env = dict(env, path=str(Path(path).parent / env["path"]))
    mdp = resolve_env(env)
    spec = parse_delay(doc["delay"])
    if spec.kind == "walk":
        raise ConfigError("exact enumeration needs a constant or iid delay")
    queue = tuple(doc.get("default_queue", [0] * spec.max_delay))
    policy_doc = doc.get("policy", "uniform")
    try:
        config = SedConfig(mdp, spec.max_delay, spec.process(), queue)
        policy = (uniform_policy(mdp.n_states, mdp.n_actions) if policy_doc == "uniform"
                  else MarkovPolicy(np.array(policy_doc, dtype=float)))
    except (DomainError, ValueError) as exc:
        raise ConfigError(f"enumeration config: {exc}") from None
    return config, policy


def cmd_enumerate(args) -> int:
    config, policy = load_enumeration_config(args.config)
    probs = enumerate_histories(config, policy, args.horizon,
                                EnumerationBudget(args.budget, args.horizon))
    support = {h: p for h, p in probs.items() if p > 0}
    print(f"{len(probs)} histories, {len(support)} with positive probability, "
          f"total mass {total_mass(probs):.15f}")
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "histories.jsonl", "w", encoding="utf-8") as fh:
            for h, p in support.items():
                fh.write(json.dumps({"states": h.states, "delays": h.delays, "actions": h.actions,
                                     "p": p}, separators=(",", ":")) + "\n")
    return 0


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "solve-augmented": cmd_solve, "enumerate": cmd_enumerate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError, DomainError, BudgetExceededError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
