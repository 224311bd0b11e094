"""Self-check batteries behind ``sedmdp verify <suite>``.

Each check reports the measured deviation next to the tolerance it is held
to.  The micro instances used here are also exported for the test suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .delays import (
    ConstantDelay,
    IidDelay,
    QueueState,
    RandomWalkDelay,
    effective_decision_time,
    resolve_pending_queue,
)
from .envs import make_bandit, make_chain, make_gridworld
from .mdp import HistoryPolicy, MdpSpec, uniform_policy, value_iteration
from .oracles import (
    augmented_vi,
    best_markov_vs_best_history,
    enumerate_histories,
    history_frequencies,
    step_conditionals,
    total_mass,
)
from .planning import ExactModel, MctsConfig, expectimax_values, make_agent, mcts_plan
from .rng import stream
from .sed import SedConfig, SedEnv, markov_reduction, process_marginal

SUITES = ("queues", "theorem1", "theorem2", "planner", "walk")


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: measured={self.measured:.6g} tolerance={self.tolerance:.6g}"


def _within(name, measured, tol) -> Check:
    return Check(name, float(measured), float(tol), bool(measured <= tol))


# ---------------------------------------------------------------------------
# Micro instances
# ---------------------------------------------------------------------------

# P(s'|s,a) is not additive in (s, a), so no state-action pair is redundant.
MICRO_KERNEL = np.array([[[0.9, 0.1], [0.2, 0.8]], [[0.3, 0.7], [0.6, 0.4]]])


def micro_mdp(gamma: float = 0.9) -> MdpSpec:
    return MdpSpec(MICRO_KERNEL, [[1.0, 0.0], [0.2, 0.7]], [0.5, 0.5], gamma, name="micro")


def flip_mdp(gamma: float = 0.9) -> MdpSpec:
    """Deterministic 2-state MDP: action 0 stays, action 1 flips; start in 0."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = P[1, 0, 1] = P[1, 1, 0] = 1.0
    return MdpSpec(P, [[0.0, 1.0], [1.0, 0.0]], [1.0, 0.0], gamma, name="flip")


def history_policies() -> list[HistoryPolicy]:
    """Randomized rules reading more than the current state."""

    def s0switch(h):
        return np.array([0.7, 0.3]) if h.states[-1] == h.states[0] else np.array([0.2, 0.8])

    def parity(h):
        return np.array([0.6, 0.4]) if sum(h.states) % 2 == 0 else np.array([0.1, 0.9])

    def prevstate(h):
        prev = h.states[-2] if h.t >= 1 else 0
        table = {(0, 0): 0.8, (0, 1): 0.35, (1, 0): 0.05, (1, 1): 0.5}
        p = table[(prev, h.states[-1])]
        return np.array([p, 1.0 - p])

    return [HistoryPolicy(f, 2, f.__name__) for f in (s0switch, parity, prevstate)]


def parity_rule_policy() -> HistoryPolicy:
    """Deterministic rule on the parity of ``sum(states) + current delay``."""
    return HistoryPolicy(lambda h: np.eye(2)[(sum(h.states) + h.delays[-1]) % 2], 2, "delay-parity")


REDUCTION_DELAYS = [(1, 0, 1), (1, 1, 0), (0, 1, 1), (1, 0, 0)]


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def queue_checks() -> list[Check]:
    """The worked window with M = 5 and delays (5, 4, 4, 4, 3) for t = 0..4."""
    m = 5
    window = QueueState.initial([0] * m, m)
    for t, z in enumerate((5, 4, 4, 4, 3)):
        window = window.push(t, z)  # action id == decision time
    expected = {5: [1, 2, 4, 4, 4], 4: [1, 2, 4, 4], 3: [1, 2, 4], 2: [1, 2], 1: [1], 0: []}
    checks = []
    for z5, want in expected.items():
        got = resolve_pending_queue(5, z5, window)
        checks.append(Check(f"pending queue z5={z5} -> {want}", float(got != want), 0.0, got == want))
    for z5 in range(6):
        want = 1 if z5 > 0 else 5
        got = effective_decision_time(5, window, z5)
        checks.append(Check(f"tau5 z5={z5} -> {want}", abs(got - want), 0.0, got == want))
    return checks


def theorem1_checks(n: int = 100_000, seed: int = 0, horizon: int = 4) -> list[Check]:
    checks = []
    mass_cfg = SedConfig(micro_mdp(), 2, IidDelay((0.3, 0.3, 0.4)), (1, 0))
    probs = enumerate_histories(mass_cfg, uniform_policy(2, 2), horizon)
    checks.append(_within(f"enumerated mass, stochastic micro MDP, H={horizon}", abs(total_mass(probs) - 1.0), 1e-12))
    hist_probs = enumerate_histories(mass_cfg, history_policies()[2], horizon)
    checks.append(_within(f"enumerated mass, history policy, H={horizon}", abs(total_mass(hist_probs) - 1.0), 1e-12))

    cfg = SedConfig(flip_mdp(), 2, IidDelay((0.5, 0.3, 0.2)), (1, 0))
    policy = parity_rule_policy()
    exact = enumerate_histories(cfg, policy, horizon)
    checks.append(_within("enumerated mass, Monte Carlo instance", abs(total_mass(exact) - 1.0), 1e-12))
    freq = history_frequencies(cfg, policy, horizon, n, np.random.default_rng(seed))
    worst = 0.0
    failures = 0
    for h, p in exact.items():
        dev = abs(freq.get(h, 0) / n - p)
        se = math.sqrt(p * (1 - p) / n)
        if dev > 3 * se:
            failures += 1
        if se > 0:
            worst = max(worst, dev / se)
    unexpected = sum(1 for h in freq if exact.get(h, 0.0) == 0.0)
    checks.append(Check(f"histories beyond 3 standard errors (N={n})", failures, 0, failures == 0))
    checks.append(Check("worst |freq - p| in standard errors", worst, 3.0, worst <= 3.0))
    checks.append(Check("sampled histories with zero probability", unexpected, 0, unexpected == 0))
    return checks


def theorem2_checks(horizon: int = 3) -> list[Check]:
    mdp = micro_mdp()
    cfg = SedConfig(mdp, 1, IidDelay((0.5, 0.5)), (0,))
    checks = []
    for policy in history_policies():
        worst = 0.0
        for z in REDUCTION_DELAYS:
            for s0 in range(mdp.n_states):
                reduced = markov_reduction(cfg, policy, s0, z, horizon)
                for t in range(horizon):
                    a = process_marginal(cfg, policy, s0, z, t)
                    b = process_marginal(cfg, reduced, s0, z, t)
                    worst = max(worst, float(np.max(np.abs(a - b))))
        checks.append(_within(f"marginal vs Markov reduction, {policy.name}", worst, 1e-10))
    for z in REDUCTION_DELAYS:
        md, hd = best_markov_vs_best_history(cfg, horizon, z)
        checks.append(_within(f"best Markov vs best history z={z}", abs(hd - md), 1e-10))
    worst = 0.0
    for policy in history_policies():
        for z in [(1, 1, 1), (0, 1, 1)]:
            cond = step_conditionals(cfg, policy, 0, z, 2)
            spread = np.nanmax(cond, axis=2) - np.nanmin(cond, axis=2)
            worst = max(worst, float(np.nanmax(spread)))
    checks.append(_within("next state independent of the new decision when z_t > 0", worst, 1e-12))
    return checks


def planner_checks(seed: int = 0, episodes: int = 200) -> list[Check]:
    checks = []
    bandit = make_bandit()
    res = mcts_plan(0, ExactModel(bandit), MctsConfig(256, rollout_depth=3), stream(seed, "bandit"))
    checks.append(Check("bandit picks the dominant arm", res.action, 0, res.action == 0))

    chain = make_chain(5, 0.1, 0.95)
    _, q = value_iteration(chain, tol=1e-13)
    gap = np.max(np.abs(expectimax_values(ExactModel(chain), 2000)[0] - q[0]))
    checks.append(_within("expectimax root values vs value iteration", gap, 1e-9))

    grid = make_gridworld(4, 4, 0.1, goal=(3, 3), pits=[(1, 2)])
    v, _ = value_iteration(grid, tol=1e-12)
    sol = augmented_vi(grid, 0, tol=1e-12)
    checks.append(_within("augmented VI at M=0 vs VI", np.max(np.abs(sol.values[:, 0] - v)), 1e-9))

    m = 2
    target = augmented_vi(chain, m, tol=1e-12).initial_value(chain.mu)
    mean = delayed_chain_return(chain, m, episodes, seed)
    checks.append(_within(f"delayed-mcts on chain(5), M={m}: relative gap to augmented optimum",
                          abs(target - mean) / target, 0.05))
    return checks


def delayed_chain_return(mdp: MdpSpec, m: int, episodes: int, seed: int,
                         mcts: MctsConfig | None = None) -> float:
    """Mean discounted return of a delayed-mcts agent with the exact model."""
    mcts = mcts or MctsConfig(n_simulations=128, uct_c=1.0, rollout_depth=6)
    agent = make_agent("delayed-mcts", mdp, m, "exact", mcts)
    env = SedEnv(SedConfig(mdp, m, ConstantDelay(m), (0,) * m), max_steps=200)
    total = []
    for ep in range(episodes):
        rng = stream(seed, "chain-episode", ep)
        s, z = env.reset(rng, lambda s0: agent.begin_episode(s0, rng))
        while not env.done:
            s, _, _ = env.step(agent.act(s, z, rng, t=env.queue.t), rng)
            z = env.z
        total.append(env.record.discounted_return)
    return math.fsum(total) / episodes


def walk_checks(n: int = 100_000, seed: int = 0, m: int = 5, p: float = 0.2) -> list[Check]:
    stats = walk_statistics(n, seed, m, p)
    return [
        Check("increments in {-1, 0, 1}", stats["bad_increments"], 0, stats["bad_increments"] == 0),
        Check(f"values in [0, {m}]", stats["out_of_range"], 0, stats["out_of_range"] == 0),
        _within(f"|up frequency - {p}| on interior steps", abs(stats["up"] - p), 0.01),
        _within(f"|down frequency - {p}| on interior steps", abs(stats["down"] - p), 0.01),
        Check("first delay after reset differs from M (frequency)", stats["carry_fraction"], 0.0,
              stats["carry_fraction"] > 0),
    ]


def walk_statistics(n: int, seed: int, m: int = 5, p: float = 0.2, resets: int = 200) -> dict:
    """Walk until ``n`` interior steps have been observed, then probe resets."""
    rng = stream(seed, "walk")
    walk = RandomWalkDelay(m, p, p)
    prev = walk.step(rng)
    interior = up = down = bad = out = 0
    while interior < n:
        z = walk.step(rng)
        if abs(z - prev) > 1:
            bad += 1
        if not 0 <= z <= m:
            out += 1
        if 0 < prev < m:
            interior += 1
            up += z == prev + 1
            down += z == prev - 1
        prev = z
    # carry-over: a short episode followed by a reset must resume the walk
    env = SedEnv(SedConfig(make_chain(3), m, RandomWalkDelay(m, p, p), (1,) * m), max_steps=3,
                 delay_rng=stream(seed, "walk-env"))
    differs = 0
    env_rng = stream(seed, "walk-episodes")
    for _ in range(resets):
        env.reset(env_rng)
        z_first = env.z
        differs += z_first != m
        while not env.done:
            env.step(1, env_rng)
    return {"bad_increments": bad, "out_of_range": out, "up": up / interior, "down": down / interior,
            "carry_fraction": differs / resets}


def run_suite(name: str, **kwargs) -> list[Check]:
    table = {
        "queues": queue_checks,
        "theorem1": theorem1_checks,
        "theorem2": theorem2_checks,
        "planner": planner_checks,
        "walk": walk_checks,
    }
    if name not in table:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return table[name](**kwargs)
