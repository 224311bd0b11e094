"""Stochastic execution-delay MDP: environment semantics and exact process laws.

Two readings of a randomized policy coexist here and matter when one decision
is executed at several steps:

* the simulator (:func:`env_step`) is mechanistic: one action is decided per
  step and the environment replays that exact action wherever it executes;
* the exact calculators (:func:`trajectory_probability`,
  :func:`process_marginal`) use the product law in which every executed step
  ``l`` contributes its own factor ``pi_{tau_l}(h_l)(a_l)``.

For deterministic policies the two coincide.  :func:`sample_formal_history`
draws from the product law directly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .delays import (
    ConstantDelay,
    DelayProcess,
    IidDelay,
    QueueState,
    decision_times,
    effective_decision_time,
    resolve_pending_queue,
    switch_time,
)
from .errors import BudgetExceededError, DomainError
from .mdp import History, MarkovPolicy, MdpSpec, Policy

DEFAULT_BUDGET = 2_000_000


@dataclass
class SedConfig:
    mdp: MdpSpec
    max_delay: int
    delay_process: DelayProcess
    default_queue: tuple = ()

    def __post_init__(self):
        self.default_queue = tuple(int(a) for a in self.default_queue)
        if len(self.default_queue) != self.max_delay:
            raise DomainError(
                f"default queue has length {len(self.default_queue)}, expected {self.max_delay}"
            )
        if any(not 0 <= a < self.mdp.n_actions for a in self.default_queue):
            raise DomainError("default queue references an invalid action")
        if self.delay_process.max_delay != self.max_delay:
            raise DomainError(
                f"delay process bound {self.delay_process.max_delay} != max delay {self.max_delay}"
            )

    def delay_pmf(self) -> np.ndarray:
        """The i.i.d. delay law; refuses processes with memory."""
        if isinstance(self.delay_process, (IidDelay, ConstantDelay)):
            return self.delay_process.pmf()
        raise DomainError(
            f"exact history laws need i.i.d. delays, got {self.delay_process.kind!r}"
        )


def _sample_index(p: np.ndarray, rng) -> int:
    i = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(i, int(np.flatnonzero(p)[-1]))


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


def env_reset(config: SedConfig, rng, carryover: Optional[DelayProcess] = None, delay_rng=None):
    """Start an episode; returns ``(s_0, z_0, queue, delay_process)``.

    With ``carryover`` the given process instance is resumed (and mutated),
    otherwise a fresh copy of the configured process is used.  Delays are
    drawn from ``delay_rng`` when given, else from ``rng``.
    """
    process = carryover if carryover is not None else config.delay_process.fresh()
    s0 = _sample_index(config.mdp.mu, rng)
    z0 = process.step(rng if delay_rng is None else delay_rng)
    queue = QueueState.initial(config.default_queue, config.max_delay)
    return s0, z0, queue, process


def executed_action(queue: QueueState, z_t: int, a_decided: int) -> tuple[int, int]:
    """``(a_{tau_t}, tau_t)`` for the decision ``a_decided`` made at ``queue.t``."""
    tau = effective_decision_time(queue.t, queue, z_t)
    if tau == queue.t:
        return int(a_decided), tau
    return queue.action_at(tau), tau


def env_step(config: SedConfig, queue: QueueState, s_t: int, z_t: int, a_decided: int, rng):
    """Advance one step; returns ``(s_next, r_t, a_executed, tau_t, next_queue)``."""
    mdp = config.mdp
    if not 0 <= int(a_decided) < mdp.n_actions:
        raise DomainError(f"invalid action id {a_decided}")
    a_exec, tau = executed_action(queue, z_t, a_decided)
    r = float(mdp.r[s_t, a_exec])
    s_next = _sample_index(mdp.P[s_t, a_exec], rng)
    return s_next, r, a_exec, tau, queue.push(a_decided, z_t)


@dataclass(frozen=True)
class StepRecord:
    t: int
    s: int
    z: int
    a_decided: int
    tau: int
    a_executed: int
    r: float
    s_next: int
    done: bool = False


@dataclass
class EpisodeRecord:
    default_queue: tuple
    max_delay: int
    steps: list = field(default_factory=list)
    gamma: float = 1.0

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def episode_return(self) -> float:
        return float(sum(st.r for st in self.steps))

    @property
    def discounted_return(self) -> float:
        return float(sum(self.gamma**st.t * st.r for st in self.steps))

    @property
    def delays(self) -> list:
        return [st.z for st in self.steps]


class SedEnv:
    """Stateful wrapper around :func:`env_reset` / :func:`env_step`.

    The delay process instance persists across :meth:`reset` calls, so a
    random-walk delay continues where the previous episode left it.
    """

    def __init__(self, config: SedConfig, max_steps: int = 200, delay_rng=None):
        self.config = config
        self.max_steps = max_steps
        self.delay_rng = delay_rng
        self.process = config.delay_process.fresh()
        self._started = False

    def reset(self, rng, default_queue=None):
        """Begin an episode.  ``default_queue`` may be a sequence or a callable
        mapping the sampled ``s_0`` to the opening queue."""
        s0 = None
        if callable(default_queue):
            s0 = _sample_index(self.config.mdp.mu, rng)
            default_queue = default_queue(s0)
        if default_queue is not None:
            self.config = SedConfig(
                self.config.mdp, self.config.max_delay, self.config.delay_process, tuple(default_queue)
            )
        carry = self.process if self._started else None
        if s0 is None:
            self.s, self.z, self.queue, self.process = env_reset(self.config, rng, carry, self.delay_rng)
        else:
            self.process = carry if carry is not None else self.config.delay_process.fresh()
            self.s = s0
            self.z = self.process.step(rng if self.delay_rng is None else self.delay_rng)
            self.queue = QueueState.initial(self.config.default_queue, self.config.max_delay)
        self._started = True
        self.done = self.config.mdp.is_terminal(self.s)
        self.record = EpisodeRecord(
            self.config.default_queue, self.config.max_delay, gamma=self.config.mdp.gamma
        )
        return self.s, self.z

    def step(self, a_decided: int, rng):
        if self.done:
            raise DomainError("episode already finished")
        t = self.queue.t
        s_next, r, a_exec, tau, self.queue = env_step(
            self.config, self.queue, self.s, self.z, a_decided, rng
        )
        terminal = self.config.mdp.is_terminal(s_next)
        self.record.steps.append(
            StepRecord(t, self.s, self.z, int(a_decided), tau, a_exec, r, s_next, terminal)
        )
        self.s = s_next
        self.done = terminal or self.queue.t >= self.max_steps
        if not self.done:
            self.z = self.process.step(rng if self.delay_rng is None else self.delay_rng)
        return s_next, r, self.done


def simulate_history(config: SedConfig, policy: Policy, horizon: int, rng,
                     delays: Optional[Sequence[int]] = None) -> History:
    """Run the mechanistic simulator for ``horizon`` steps and return ``h_{horizon-1}``.

    Decisions are drawn once per step from ``policy`` (rule ``t`` on ``h_t``);
    the history records executed actions.  ``delays`` pins the delay sequence.
    """
    s, z, queue, process = env_reset(config, rng)
    if delays is not None:
        z = int(delays[0])
    states, zs, actions = [s], [z], []
    for t in range(horizon - 1):
        h = History(tuple(states), tuple(zs), tuple(actions))
        a = policy.sample(t, h, rng)
        s, _, a_exec, _, queue = env_step(config, queue, s, z, a, rng)
        z = int(delays[t + 1]) if delays is not None else process.step(rng)
        states.append(s)
        zs.append(z)
        actions.append(a_exec)
    return History(tuple(states), tuple(zs), tuple(actions))


def sample_formal_history(config: SedConfig, policy: Policy, horizon: int, rng,
                          delays: Optional[Sequence[int]] = None, s0: Optional[int] = None) -> History:
    """Sample ``h_{horizon-1}`` from the product law of the exact calculators."""
    mdp = config.mdp
    m = config.max_delay
    s = _sample_index(mdp.mu, rng) if s0 is None else int(s0)
    states, actions = [s], []
    process = None
    if delays is None:
        process = config.delay_process.fresh()
        z_seq = [process.step(rng)]
    else:
        z_seq = list(delays)
    for t in range(horizon - 1):
        tau = decision_times(z_seq[: t + 1], m)[t]
        if tau < 0:
            a = config.default_queue[tau + m]
        else:
            h = History(tuple(states), tuple(z_seq[: t + 1]), tuple(actions))
            a = _sample_index(policy.probs(tau, h), rng)
        s = _sample_index(mdp.P[s, a], rng)
        states.append(s)
        actions.append(a)
        if process is not None:
            z_seq.append(process.step(rng))
    return History(tuple(states), tuple(z_seq[:horizon]), tuple(actions))


# ---------------------------------------------------------------------------
# Exact laws
# ---------------------------------------------------------------------------


def trajectory_probability(config: SedConfig, policy: Policy, history: History) -> float:
    """Probability of observing ``history`` under ``policy`` (i.i.d. delays)."""
    zeta = config.delay_pmf()
    mdp = config.mdp
    m = config.max_delay
    if any(not 0 <= z <= m for z in history.delays):
        return 0.0
    p = float(mdp.mu[history.states[0]])
    for z in history.delays:
        p *= zeta[z]
    if p == 0.0:
        return 0.0
    taus = decision_times(history.delays, m)
    for l, a in enumerate(history.actions):
        tau = taus[l]
        if tau < 0:
            if a != config.default_queue[tau + m]:
                return 0.0
        else:
            p *= float(policy.probs(tau, history.prefix(l))[a])
        p *= float(mdp.P[history.states[l], a, history.states[l + 1]])
        if p == 0.0:
            return 0.0
    return p


def check_budget(count: int, budget: int) -> None:
    if count > budget:
        raise BudgetExceededError(count, budget)


def enumerate_paths(config: SedConfig, policy: Policy, s0: int, delays: Sequence[int], last: int):
    """Yield ``(states, actions, weight)`` for executed paths through ``a_last``.

    ``weight`` is the probability of ``a_0, s_1, ..., s_last, a_last`` given
    ``s_0`` and the delay realization; zero-weight branches are pruned.
    """
    mdp = config.mdp
    m = config.max_delay
    taus = decision_times(list(delays)[: last + 1], m)

    def rec(states, actions, weight):
        l = len(actions)
        h = History(tuple(states), tuple(delays[: l + 1]), tuple(actions))
        tau = taus[l]
        if tau < 0:
            choices = [(config.default_queue[tau + m], 1.0)]
        else:
            p = policy.probs(tau, h)
            choices = [(a, float(p[a])) for a in range(mdp.n_actions) if p[a] > 0]
        for a, pa in choices:
            w = weight * pa
            if l == last:
                yield tuple(states), tuple(actions) + (a,), w
                continue
            row = mdp.P[states[-1], a]
            for s_next in np.flatnonzero(row):
                yield from rec(states + [int(s_next)], actions + [a], w * float(row[s_next]))

    yield from rec([int(s0)], [], 1.0)


def process_marginal(config: SedConfig, policy: Policy, s0: int, delays: Sequence[int], t: int,
                     budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """Exact ``P(s_{tau_t} = s', a_t = a | s_0, z)`` as an ``(S, A)`` array."""
    mdp = config.mdp
    if len(delays) < t + 1:
        raise DomainError(f"need at least {t + 1} delays, got {len(delays)}")
    check_budget((mdp.n_states * mdp.n_actions) ** (t + 1), budget)
    taus = decision_times(list(delays)[: t + 1], config.max_delay)
    tau = max(taus[t], 0)
    out = np.zeros((mdp.n_states, mdp.n_actions))
    for states, actions, w in enumerate_paths(config, policy, s0, delays, t):
        out[states[tau], actions[t]] += w
    return out


def markov_reduction(config: SedConfig, policy: Policy, s0: int, delays: Sequence[int], horizon: int,
                     budget: int = DEFAULT_BUDGET) -> MarkovPolicy:
    """Markov policy matching ``policy``'s ``(s_{tau_t}, a_t)`` marginals for ``t < horizon``.

    Rule ``tau_t`` at ``s'`` is ``P(a_t = a | s_{tau_t} = s', s_0, z)``.  Rules
    at unreached pairs, and at indices that are never an effective decision
    time, are uniform.  When several steps share one effective decision time
    the earliest of them defines the rule.
    """
    mdp = config.mdp
    n_s, n_a = mdp.n_states, mdp.n_actions
    check_budget((n_s * n_a) ** horizon, budget)
    rules = np.full((horizon, n_s, n_a), 1.0 / n_a)
    taus = decision_times(list(delays)[:horizon], config.max_delay)
    filled = set()
    for t in range(horizon):
        tau = taus[t]
        if tau < 0 or tau in filled:
            continue
        joint = process_marginal(config, policy, s0, delays, t, budget)
        mass = joint.sum(axis=1)
        for s in range(n_s):
            if mass[s] > 0:
                rules[tau, s] = joint[s] / mass[s]
        filled.add(tau)
    return MarkovPolicy(rules)


def all_histories(n_states: int, n_actions: int, max_delay: int, horizon: int):
    """Every ``h_{horizon-1}`` over the given alphabets."""
    s_seqs = itertools.product(range(n_states), repeat=horizon)
    for states in s_seqs:
        for delays in itertools.product(range(max_delay + 1), repeat=horizon):
            for actions in itertools.product(range(n_actions), repeat=horizon - 1):
                yield History(states, delays, actions)


def history_count(n_states: int, n_actions: int, max_delay: int, horizon: int) -> int:
    return (n_states * (max_delay + 1)) ** horizon * n_actions ** (horizon - 1)


__all__ = [
    "SedConfig",
    "SedEnv",
    "EpisodeRecord",
    "StepRecord",
    "env_reset",
    "env_step",
    "executed_action",
    "simulate_history",
    "sample_formal_history",
    "trajectory_probability",
    "enumerate_paths",
    "process_marginal",
    "markov_reduction",
    "all_histories",
    "history_count",
    "switch_time",
    "resolve_pending_queue",
]
