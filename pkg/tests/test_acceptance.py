"""Acceptance battery.  Each test records one PASS/FAIL line, printed at the
end of the session by the hook in conftest.py."""
import itertools
import json
import math
import time

import numpy as np
import pytest

from sedmdp.cli import main
from sedmdp.delays import IidDelay, QueueState, RandomWalkDelay, effective_decision_time, resolve_pending_queue
from sedmdp.envs import make_branch_gridworld, make_chain, make_gridworld
from sedmdp.harness import ExperimentConfig, run_experiment
from sedmdp.mdp import uniform_policy, value_iteration
from sedmdp.oracles import (
    augmented_vi,
    best_markov_vs_best_history,
    enumerate_histories,
    history_frequencies,
    total_mass,
)
from sedmdp.sed import SedConfig, SedEnv, markov_reduction, process_marginal
from sedmdp.verification import (
    REDUCTION_DELAYS,
    delayed_chain_return,
    flip_mdp,
    history_policies,
    micro_mdp,
    parity_rule_policy,
    walk_statistics,
)

RESULTS = []


def record(number, title, passed, detail):
    RESULTS.append(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
    assert passed, detail


def test_1_pending_queue_ground_truth():
    start = time.perf_counter()
    window = QueueState.initial([0] * 5, 5)
    for t, z in enumerate((5, 4, 4, 4, 3)):
        window = window.push(t, z)
    expected = {5: [1, 2, 4, 4, 4], 4: [1, 2, 4, 4], 3: [1, 2, 4], 2: [1, 2], 1: [1], 0: []}
    queues_ok = all(resolve_pending_queue(5, z, window) == q for z, q in expected.items())
    taus_ok = all(effective_decision_time(5, window, z) == (1 if z else 5) for z in range(6))
    elapsed = time.perf_counter() - start
    record(1, "pending-queue ground truth", queues_ok and taus_ok and elapsed < 0.1,
           f"6/6 queues {'match' if queues_ok else 'DIFFER'}, tau_5 {'ok' if taus_ok else 'WRONG'}, {elapsed * 1e3:.2f} ms")


def test_2_history_law_enumeration_and_monte_carlo():
    start = time.perf_counter()
    horizon, n = 4, 100_000
    mass_cfg = SedConfig(micro_mdp(), 2, IidDelay((0.3, 0.3, 0.4)), (1, 0))
    mass_dev = max(abs(total_mass(enumerate_histories(mass_cfg, pol, horizon)) - 1.0)
                   for pol in [uniform_policy(2, 2), *history_policies()])

    cfg = SedConfig(flip_mdp(), 2, IidDelay((0.5, 0.3, 0.2)), (1, 0))
    policy = parity_rule_policy()
    exact = enumerate_histories(cfg, policy, horizon)
    mass_dev = max(mass_dev, abs(total_mass(exact) - 1.0))
    freq = history_frequencies(cfg, policy, horizon, n, np.random.default_rng(0))
    worst, bad = 0.0, 0
    for h, p in exact.items():
        dev = abs(freq.get(h, 0) / n - p)
        se = math.sqrt(p * (1 - p) / n)
        bad += dev > 3 * se
        if se > 0:
            worst = max(worst, dev / se)
    elapsed = time.perf_counter() - start
    record(2, "history-law mass and Monte Carlo", mass_dev <= 1e-12 and bad == 0 and elapsed < 60,
           f"mass deviation {mass_dev:.1e} (tol 1e-12); {len(exact)} histories, "
           f"{sum(p > 0 for p in exact.values())} positive, worst {worst:.2f} se, {bad} beyond 3 se; {elapsed:.1f} s")


def test_3_markov_reduction():
    start = time.perf_counter()
    cfg = SedConfig(micro_mdp(), 1, IidDelay((0.5, 0.5)), (0,))
    horizon = 3
    worst = 0.0
    for policy, z, s0 in itertools.product(history_policies(), REDUCTION_DELAYS, (0, 1)):
        reduced = markov_reduction(cfg, policy, s0, z, horizon)
        for t in range(horizon):
            diff = process_marginal(cfg, policy, s0, z, t) - process_marginal(cfg, reduced, s0, z, t)
            worst = max(worst, float(np.max(np.abs(diff))))
    gaps = [abs(hd - md) for md, hd in (best_markov_vs_best_history(cfg, horizon, z) for z in REDUCTION_DELAYS)]
    elapsed = time.perf_counter() - start
    record(3, "Markov-reduction marginals and policy-class optimum", worst <= 1e-10 and max(gaps) <= 1e-10,
           f"{len(history_policies())} policies x {len(REDUCTION_DELAYS)} delay realizations, worst marginal gap "
           f"{worst:.1e}, worst MD/HD gap {max(gaps):.1e} (tol 1e-10); {elapsed:.2f} s")


def test_4_planner_vs_augmented_oracle():
    start = time.perf_counter()
    chain = make_chain(5, 0.1, 0.95)
    target = augmented_vi(chain, 2, tol=1e-12).initial_value(chain.mu)
    mean = delayed_chain_return(chain, 2, 200, seed=0)
    rel = abs(target - mean) / target
    m0_gap = 0.0
    for mdp in (chain, make_gridworld(4, 4, 0.1, goal=(3, 3), pits=[(1, 2)])):
        v, _ = value_iteration(mdp, tol=1e-12)
        m0_gap = max(m0_gap, float(np.max(np.abs(augmented_vi(mdp, 0, tol=1e-12).values[:, 0] - v))))
    elapsed = time.perf_counter() - start
    record(4, "delayed-mcts vs augmented optimum", rel <= 0.05 and m0_gap <= 1e-9 and elapsed < 120,
           f"optimum {target:.4f}, agent {mean:.4f}, relative gap {rel:.3%} (tol 5%); "
           f"M=0 vs VI {m0_gap:.1e} (tol 1e-9); {elapsed:.1f} s")


def test_5_delay_awareness_helps():
    start = time.perf_counter()
    details, ok = [], True
    for delay in ("constant:5", "walk:5,0.2"):
        cfg = ExperimentConfig.from_dict({
            "run_id": "acceptance-5", "env": "branch", "delay": delay,
            "agents": ["delayed-mcts", "oblivious-mcts"], "episodes": 32, "seeds": list(range(50)),
            "planner": {"n_simulations": 1, "rollout_depth": 20, "expansion": "expectimax"},
            "forward_model": "exact", "max_steps": 60,
        })
        cmp = run_experiment(cfg, threads=4, write=False).paired_difference("delayed-mcts", "oblivious-mcts")
        ok &= cmp.low > 0
        details.append(f"{delay}: diff {cmp.mean:.3f} CI95 [{cmp.low:.3f}, {cmp.high:.3f}]")
    mdp = make_branch_gridworld()
    values = [augmented_vi(mdp, m, tol=1e-10).initial_value(mdp.mu) for m in range(3)]
    monotone = all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    elapsed = time.perf_counter() - start
    record(5, "delay-aware beats oblivious; optimum nonincreasing in M", ok and monotone and elapsed < 600,
           "; ".join(details) + f"; V*(M=0,1,2) = {', '.join(f'{v:.4f}' for v in values)}; {elapsed:.1f} s")


def test_6_random_walk_delay():
    stats = walk_statistics(100_000, seed=0, m=5, p=0.2)
    ok = (stats["bad_increments"] == 0 and stats["out_of_range"] == 0 and abs(stats["up"] - 0.2) <= 0.01
          and abs(stats["down"] - 0.2) <= 0.01 and stats["carry_fraction"] > 0)
    record(6, "random-walk delay", ok,
           f"up {stats['up']:.4f}, down {stats['down']:.4f} (0.2 +- 0.01), bad increments {stats['bad_increments']}, "
           f"out of range {stats['out_of_range']}, first post-reset delay != M in {stats['carry_fraction']:.0%} of resets")


def test_7_determinism(tmp_path):
    doc = {
        "run_id": "acceptance-7", "env": "branch", "delay": "walk:3,0.2",
        "agents": ["delayed-mcts", "oblivious-mcts", "delayed-q", "oblivious-q"],
        "episodes": 4, "seeds": [0, 1, 2, 3], "planner": {"n_simulations": 16, "rollout_depth": 8},
        "forward_model": "learned", "max_steps": 40,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    snapshots = []
    for name, threads in (("a", 1), ("b", 1), ("c", 4)):
        assert main(["--seed", "11", "--threads", str(threads), "run", "--config", str(path),
                     "--out", str(tmp_path / name)]) == 0
        root = tmp_path / name
        files = sorted([root / "results.csv", *(root / "logs").glob("*.jsonl")])
        snapshots.append({f.relative_to(root).as_posix(): f.read_bytes() for f in files})
    same_runs = snapshots[0] == snapshots[1]
    same_threads = snapshots[0] == snapshots[2]
    record(7, "determinism", same_runs and same_threads,
           f"{len(snapshots[0])} files; two invocations {'identical' if same_runs else 'DIFFER'}, "
           f"threads 1 vs 4 {'identical' if same_threads else 'DIFFER'}")
