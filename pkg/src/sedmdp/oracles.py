"""Brute-force ground truth: history enumeration, augmented-state value
iteration, and exhaustive policy-class search on micro instances."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .delays import decision_times
from .errors import BudgetExceededError, DomainError
from .mdp import History, MdpSpec, Policy, value_iteration
from .sed import (
    SedConfig,
    all_histories,
    enumerate_paths,
    history_count,
    sample_formal_history,
    simulate_history,
    trajectory_probability,
)


@dataclass(frozen=True)
class EnumerationBudget:
    max_histories: int = 2_000_000
    horizon: int = 4

    def __post_init__(self):
        if self.max_histories <= 0:
            raise DomainError("budget cap must be positive")
        if self.horizon < 1:
            raise DomainError("horizon must be at least 1")


def enumerate_histories(config: SedConfig, policy: Policy, horizon: int,
                        budget: EnumerationBudget | None = None) -> dict:
    """Map every ``h_{horizon-1}`` to its exact probability."""
    budget = budget or EnumerationBudget(horizon=horizon)
    mdp = config.mdp
    count = history_count(mdp.n_states, mdp.n_actions, config.max_delay, horizon)
    if count > budget.max_histories:
        raise BudgetExceededError(count, budget.max_histories)
    config.delay_pmf()
    return {
        h: trajectory_probability(config, policy, h)
        for h in all_histories(mdp.n_states, mdp.n_actions, config.max_delay, horizon)
    }


def total_mass(probabilities: dict) -> float:
    return math.fsum(probabilities.values())


# ---------------------------------------------------------------------------
# Augmented-state value iteration (constant delay)
# ---------------------------------------------------------------------------


@dataclass
class AugmentedSolution:
    """Values over augmented states ``(s, q_0, ..., q_{M-1})``.

    ``values[s, code]`` where ``code`` encodes the pending queue in base
    ``|A|`` with ``q_0`` (next to execute) as the most significant digit.
    """

    values: np.ndarray
    policy: np.ndarray
    max_delay: int
    n_actions: int
    residuals: list

    @property
    def n_augmented_states(self) -> int:
        return self.values.size

    def encode(self, queue) -> int:
        code = 0
        for a in queue:
            code = code * self.n_actions + int(a)
        return code

    def decode(self, code: int) -> tuple:
        out = []
        for _ in range(self.max_delay):
            code, a = divmod(code, self.n_actions)
            out.append(a)
        return tuple(reversed(out))

    def value(self, s: int, queue=()) -> float:
        return float(self.values[s, self.encode(queue)])

    def best_queue(self, s: int) -> tuple:
        return self.decode(int(np.argmax(self.values[s])))

    def initial_value(self, mu) -> float:
        """Expected value when the opening queue is chosen after seeing ``s_0``."""
        return float(np.dot(mu, self.values.max(axis=1)))


def augmented_vi(mdp: MdpSpec, max_delay: int, tol: float = 1e-9,
                 max_states: int = 2_000_000, max_iter: int = 100_000) -> AugmentedSolution:
    """Value iteration on the constant-delay augmented MDP.

    The queue head executes; the freshly decided action joins the tail.
    """
    n_s, n_a, m = mdp.n_states, mdp.n_actions, int(max_delay)
    if m < 0:
        raise DomainError("max_delay must be nonnegative")
    n_q = n_a**m
    if n_s * n_q > max_states:
        raise BudgetExceededError(n_s * n_q, max_states)
    g = mdp.gamma
    if m == 0:
        residuals = []
        v = np.zeros(n_s)
        for _ in range(max_iter):
            v_new = (mdp.r + g * mdp.P @ v).max(axis=1)
            residuals.append(float(np.max(np.abs(v_new - v))))
            v = v_new
            if residuals[-1] <= tol:
                break
        pol = np.argmax(mdp.r + g * mdp.P @ v, axis=1)
        return AugmentedSolution(v[:, None], pol[:, None], 0, n_a, residuals)

    rest = n_a ** (m - 1)
    v = np.zeros((n_s, n_q))
    residuals = []

    def backup(v):
        # w[s', tail, a] = V(s', tail + a)
        w = v.reshape(n_s, rest, n_a)
        # cont[s, q0, tail, a] = sum_s' P(s'|s,q0) V(s', tail + a)
        cont = np.tensordot(mdp.P, w, axes=([2], [0]))
        return cont

    for _ in range(max_iter):
        cont = backup(v)
        v_new = (mdp.r[:, :, None] + g * cont.max(axis=3)).reshape(n_s, n_q)
        residuals.append(float(np.max(np.abs(v_new - v))))
        v = v_new
        if residuals[-1] <= tol:
            break
    pol = np.argmax(backup(v), axis=3).reshape(n_s, n_q)
    return AugmentedSolution(v, pol, m, n_a, residuals)


# ---------------------------------------------------------------------------
# Policy-class search for a fixed delay realization
# ---------------------------------------------------------------------------


def _expected_return(config: SedConfig, s0: int, taus, horizon: int, choose) -> float:
    mdp = config.mdp
    m = config.max_delay
    g = mdp.gamma
    total = 0.0
    stack = [((s0,), 1.0, 0.0)]
    while stack:
        states, w, acc = stack.pop()
        t = len(states) - 1
        tau = taus[t]
        a = config.default_queue[tau + m] if tau < 0 else choose(tau, states)
        acc += g**t * mdp.r[states[-1], a]
        if t == horizon - 1:
            total += w * acc
            continue
        row = mdp.P[states[-1], a]
        for s_next in np.flatnonzero(row):
            stack.append((states + (int(s_next),), w * row[s_next], acc))
    return total


def best_markov_vs_best_history(config: SedConfig, horizon: int, delays,
                                max_policies: int = 5_000_000) -> tuple[float, float]:
    """Best expected discounted return over deterministic Markov and
    deterministic history-dependent policies, for the fixed delays ``delays``.

    Rewards are collected at ``t = 0, ..., horizon - 1``.  Both searches are
    run separately for each start state (policies may depend on ``s_0``) and
    the per-start maxima are averaged under ``mu``.  With deterministic rules
    and fixed delays a history is determined by its state sequence, so a
    history rule at decision time ``k`` is a table over ``(s_1, ..., s_k)``.
    """
    mdp = config.mdp
    n_s, n_a = mdp.n_states, mdp.n_actions
    if len(delays) < horizon:
        raise DomainError(f"need {horizon} delays, got {len(delays)}")
    taus = decision_times(list(delays)[:horizon], config.max_delay)
    used = sorted({tau for tau in taus if tau >= 0})

    md_count = n_a ** (n_s * len(used))
    hd_count = math.prod(n_a ** (n_s**k) for k in used)
    if max(md_count, hd_count) > max_policies:
        raise BudgetExceededError(max(md_count, hd_count), max_policies)

    best_md = best_hd = 0.0
    for s0 in range(n_s):
        if mdp.mu[s0] == 0:
            continue
        md = -math.inf
        for choice in itertools.product(range(n_a), repeat=n_s * len(used)):
            table = {k: choice[i * n_s:(i + 1) * n_s] for i, k in enumerate(used)}
            md = max(md, _expected_return(config, s0, taus, horizon,
                                          lambda k, st: table[k][st[k]]))
        keys = {k: list(itertools.product(range(n_s), repeat=k)) for k in used}
        hd = -math.inf
        spaces = [itertools.product(range(n_a), repeat=len(keys[k])) for k in used]
        for choice in itertools.product(*spaces):
            table = {k: dict(zip(keys[k], c)) for k, c in zip(used, choice)}
            hd = max(hd, _expected_return(config, s0, taus, horizon,
                                          lambda k, st: table[k][st[1:k + 1]]))
        best_md += mdp.mu[s0] * md
        best_hd += mdp.mu[s0] * hd
    return float(best_md), float(best_hd)


def finite_horizon_optimum(mdp: MdpSpec, horizon: int) -> float:
    """Undelayed optimum of ``sum_{t<horizon} gamma^t r`` under ``mu``."""
    v = np.zeros(mdp.n_states)
    for _ in range(horizon):
        v = (mdp.r + mdp.gamma * mdp.P @ v).max(axis=1)
    return float(mdp.mu @ v)


# ---------------------------------------------------------------------------
# Monte Carlo bridge
# ---------------------------------------------------------------------------


@dataclass
class EmpiricalMarginal:
    freq: np.ndarray
    stderr: np.ndarray
    n: int

    @property
    def stderr_defined(self) -> bool:
        return self.n > 1


def monte_carlo_marginal(config: SedConfig, policy: Policy, s0: int, delays, t: int, n: int,
                         rng, mechanistic: bool = False) -> EmpiricalMarginal:
    """Empirical law of ``(s_{tau_t}, a_t)`` over ``n`` episodes with delays pinned.

    By default samples the product law the exact calculators describe; with
    ``mechanistic=True`` it runs the environment simulator instead, which
    agrees for deterministic policies.  Standard errors use the sample
    variance and are reported as NaN when ``n == 1``.
    """
    if n < 1:
        raise DomainError("need at least one sample")
    mdp = config.mdp
    counts = np.zeros((mdp.n_states, mdp.n_actions))
    tau = max(decision_times(list(delays)[: t + 1], config.max_delay)[t], 0)
    pinned = SedConfig(
        MdpSpec(mdp.P, mdp.r, np.eye(mdp.n_states)[s0], mdp.gamma, mdp.terminal),
        config.max_delay, config.delay_process, config.default_queue,
    )
    z = list(delays)[: t + 1] + [0]
    for _ in range(n):
        if mechanistic:
            h = simulate_history(pinned, policy, t + 2, rng, delays=z)
        else:
            h = sample_formal_history(pinned, policy, t + 2, rng, delays=z)
        counts[h.states[tau], h.actions[t]] += 1
    freq = counts / n
    if n > 1:
        stderr = np.sqrt(freq * (1 - freq) / (n - 1))
    else:
        stderr = np.full_like(freq, np.nan)
    return EmpiricalMarginal(freq, stderr, n)


# ---------------------------------------------------------------------------
# One-step conditionals
# ---------------------------------------------------------------------------


def step_conditionals(config: SedConfig, policy: Policy, s0: int, delays, t: int) -> np.ndarray:
    """``P(s_t = s' | a_t = a', s_{t-1} = s, a_{t-1} = a)`` indexed ``[s, a, a', s']``.

    Unreachable conditioning events are NaN.
    """
    if t < 1:
        raise DomainError("need t >= 1")
    mdp = config.mdp
    n_s, n_a = mdp.n_states, mdp.n_actions
    joint = np.zeros((n_s, n_a, n_a, n_s))
    for states, actions, w in enumerate_paths(config, policy, s0, delays, t):
        joint[states[t - 1], actions[t - 1], actions[t], states[t]] += w
    mass = joint.sum(axis=3, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(mass > 0, joint / np.where(mass > 0, mass, 1.0), np.nan)


def history_frequencies(config: SedConfig, policy: Policy, horizon: int, n: int, rng) -> dict:
    """Counts of each ``h_{horizon-1}`` produced by the environment simulator."""
    counts: dict[History, int] = {}
    for _ in range(n):
        h = simulate_history(config, policy, horizon, rng)
        counts[h] = counts.get(h, 0) + 1
    return counts


__all__ = [
    "EnumerationBudget",
    "enumerate_histories",
    "total_mass",
    "AugmentedSolution",
    "augmented_vi",
    "best_markov_vs_best_history",
    "finite_horizon_optimum",
    "monte_carlo_marginal",
    "EmpiricalMarginal",
    "step_conditionals",
    "history_frequencies",
    "value_iteration",
]
