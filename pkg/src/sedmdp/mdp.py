"""Finite MDP tables, histories and policy classes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, ValidationError

STOCHASTIC_TOL = 1e-12


@dataclass
class MdpSpec:
    """Dense finite MDP ``(S, A, P, r, mu, gamma)`` with optional absorbing states.

    ``P[s, a, s']`` is the transition kernel, ``r[s, a]`` the expected
    reward for acting ``a`` in ``s``.  Terminal states must self-loop with
    zero reward under every action.
    """

    P: np.ndarray
    r: np.ndarray
    mu: np.ndarray
    gamma: float
    terminal: frozenset = field(default_factory=frozenset)
    name: str = ""

    def __post_init__(self):
        self.P = np.array(self.P, dtype=float)
        self.r = np.array(self.r, dtype=float)
        self.mu = np.array(self.mu, dtype=float)
        self.gamma = float(self.gamma)
        self.terminal = frozenset(int(s) for s in self.terminal)
        validate(self)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def is_terminal(self, s: int) -> bool:
        return s in self.terminal


def validate(mdp: MdpSpec) -> None:
    P, r, mu = mdp.P, mdp.r, mdp.mu
    if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] == 0 or P.shape[1] == 0:
        raise ValidationError(f"P must have shape (S, A, S), got {P.shape}")
    n_s, n_a = P.shape[:2]
    if r.shape != (n_s, n_a):
        raise ValidationError(f"r must have shape ({n_s}, {n_a}), got {r.shape}")
    if mu.shape != (n_s,):
        raise ValidationError(f"mu must have shape ({n_s},), got {mu.shape}")
    if not np.all(np.isfinite(P)) or not np.all(np.isfinite(r)) or not np.all(np.isfinite(mu)):
        raise ValidationError("tables must be finite")
    if np.any(P < 0):
        s, a, _ = np.argwhere(P < 0)[0]
        raise ValidationError(f"P[{s}][{a}] has a negative entry")
    sums = P.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > STOCHASTIC_TOL)
    if bad.size:
        s, a = bad[0]
        raise ValidationError(
            f"P[{s}][{a}] sums to {sums[s, a]:.12g} (deficit {1.0 - sums[s, a]:.12g})"
        )
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > STOCHASTIC_TOL:
        raise ValidationError(f"mu must be a distribution (sums to {mu.sum():.12g})")
    if not 0.0 <= mdp.gamma < 1.0:
        raise ValidationError(f"discount must lie in [0, 1), got {mdp.gamma}")
    for s in mdp.terminal:
        if not 0 <= s < n_s:
            raise ValidationError(f"terminal state {s} out of range")
        if np.any(P[s, :, s] != 1.0) or np.any(r[s] != 0.0):
            raise ValidationError(f"terminal state {s} must self-loop with zero reward")


@dataclass(frozen=True)
class History:
    """``h_t = (s_0, z_0, a_0, ..., s_t, z_t)`` with executed actions."""

    states: tuple
    delays: tuple
    actions: tuple

    def __post_init__(self):
        if len(self.states) != len(self.delays) or len(self.actions) != len(self.states) - 1:
            raise DomainError(
                f"inconsistent history lengths: {len(self.states)} states, "
                f"{len(self.delays)} delays, {len(self.actions)} actions"
            )

    @property
    def t(self) -> int:
        return len(self.states) - 1

    def prefix(self, k: int) -> "History":
        if not 0 <= k <= self.t:
            raise DomainError(f"prefix index {k} outside [0, {self.t}]")
        return History(self.states[: k + 1], self.delays[: k + 1], self.actions[:k])


# ---------------------------------------------------------------------------
# Policies
#
# Every policy answers ``probs(k, history)``: the distribution of decision
# rule k.  The history passed in always extends h_k; rules only read the
# prefix h_k, i.e. what was known when decision k was made.
# ---------------------------------------------------------------------------


class Policy:
    n_actions: int

    def probs(self, k: int, history: History) -> np.ndarray:
        raise NotImplementedError

    def sample(self, k: int, history: History, rng) -> int:
        p = self.probs(k, history)
        a = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        return min(a, int(np.flatnonzero(p)[-1]))


def _check_rows(table: np.ndarray, what: str) -> None:
    if np.any(table < 0) or np.any(np.abs(table.sum(axis=-1) - 1.0) > STOCHASTIC_TOL):
        raise DomainError(f"{what} rows must be probability vectors")


class MarkovPolicy(Policy):
    """Markov randomized policy; ``rules[k, s]`` is rule ``k`` at state ``s``.

    A 2-D table is stationary.  Rule indices past the end reuse the last rule.
    """

    def __init__(self, rules):
        self.rules = np.array(rules, dtype=float)
        if self.rules.ndim not in (2, 3):
            raise DomainError("rules must have shape (S, A) or (T, S, A)")
        _check_rows(self.rules, "policy")
        self.n_actions = self.rules.shape[-1]

    def rule(self, k: int) -> np.ndarray:
        if self.rules.ndim == 2:
            return self.rules
        return self.rules[min(k, self.rules.shape[0] - 1)]

    def probs(self, k, history):
        return self.rule(k)[history.states[k]]


class DeterministicPolicy(Policy):
    """Stationary deterministic policy ``s -> a``."""

    def __init__(self, table, n_actions: int):
        self.table = tuple(int(a) for a in table)
        self.n_actions = n_actions
        if any(not 0 <= a < n_actions for a in self.table):
            raise DomainError("policy table references an invalid action")

    def probs(self, k, history):
        p = np.zeros(self.n_actions)
        p[self.table[history.states[k]]] = 1.0
        return p


class HistoryPolicy(Policy):
    """History-dependent randomized policy given by ``fn(h_k) -> probs``."""

    def __init__(self, fn: Callable[[History], np.ndarray], n_actions: int, name: str = ""):
        self.fn = fn
        self.n_actions = n_actions
        self.name = name

    def probs(self, k, history):
        p = np.asarray(self.fn(history.prefix(k)), dtype=float)
        if p.shape != (self.n_actions,) or np.any(p < 0) or abs(p.sum() - 1.0) > STOCHASTIC_TOL:
            raise DomainError(f"history policy {self.name!r} emitted an invalid distribution {p}")
        return p


def uniform_policy(n_states: int, n_actions: int) -> MarkovPolicy:
    return MarkovPolicy(np.full((n_states, n_actions), 1.0 / n_actions))


def value_iteration(mdp: MdpSpec, tol: float = 1e-10, max_iter: Optional[int] = None):
    """Standard value iteration; returns ``(V, Q)`` with sup-norm residual <= tol."""
    v = np.zeros(mdp.n_states)
    it = 0
    while True:
        q = mdp.r + mdp.gamma * mdp.P @ v
        v_new = q.max(axis=1)
        it += 1
        if np.max(np.abs(v_new - v)) <= tol or (max_iter is not None and it >= max_iter):
            v = v_new
            break
        v = v_new
    return v, mdp.r + mdp.gamma * mdp.P @ v
