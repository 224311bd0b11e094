"""Delay processes and action/delay queue bookkeeping.

Time indices follow the convention that the queue window at time ``t``
covers decision times ``t - M, ..., t - 1``.  Before the episode starts the
window holds virtual decisions: slot ``t' = -M + i`` carries the default
action ``abar[i]`` with delay ``M``, so its earliest execution time is ``i``.
This makes the default-queue phase fall out of the same max-rule that
resolves agent decisions.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, QueueConsistencyError


def _check_delay(z: int, max_delay: int) -> int:
    z = int(z)
    if not 0 <= z <= max_delay:
        raise DomainError(f"delay {z} outside [0, {max_delay}]")
    return z


# ---------------------------------------------------------------------------
# Delay processes
# ---------------------------------------------------------------------------


@dataclass
class ConstantDelay:
    max_delay: int
    kind = "constant"

    def __post_init__(self):
        if self.max_delay < 0:
            raise DomainError("max_delay must be nonnegative")

    def step(self, rng) -> int:
        return self.max_delay

    def pmf(self) -> np.ndarray:
        p = np.zeros(self.max_delay + 1)
        p[-1] = 1.0
        return p

    def fresh(self) -> "ConstantDelay":
        return ConstantDelay(self.max_delay)


@dataclass
class IidDelay:
    """Delays drawn independently from ``probs`` over ``{0, ..., M}``."""

    probs: np.ndarray
    kind = "iid"

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise DomainError("delay distribution must be a nonempty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise DomainError(f"delay distribution must be a probability vector, got {p}")
        self.probs = p
        self._cdf = np.cumsum(p)

    @property
    def max_delay(self) -> int:
        return self.probs.size - 1

    def step(self, rng) -> int:
        z = int(np.searchsorted(self._cdf, rng.random(), side="right"))
        if z > self.max_delay:
            # cdf can end a hair below 1
            z = int(np.flatnonzero(self.probs)[-1])
        return z

    def pmf(self) -> np.ndarray:
        return self.probs.copy()

    def fresh(self) -> "IidDelay":
        return IidDelay(self.probs.copy())


@dataclass
class RandomWalkDelay:
    """Lazy bounded random walk on ``{0, ..., M}``.

    The first emission is ``M``.  Afterwards each call moves up with
    probability ``p_up``, down with probability ``p_down`` (clamped to the
    bounds) and otherwise stays.  The current value survives episode resets;
    pass the same instance back to :func:`sedmdp.sed.env_reset` to resume it.
    """

    max_delay: int
    p_up: float = 0.2
    p_down: float = 0.2
    current: Optional[int] = None
    kind = "walk"

    def __post_init__(self):
        if self.max_delay < 0:
            raise DomainError("max_delay must be nonnegative")
        if self.p_up < 0 or self.p_down < 0 or self.p_up + self.p_down > 1:
            raise DomainError("walk probabilities must be nonnegative and sum to at most 1")
        if self.current is not None:
            self.current = _check_delay(self.current, self.max_delay)

    def step(self, rng) -> int:
        if self.current is None:
            self.current = self.max_delay
            return self.current
        u = rng.random()
        if u < self.p_up:
            self.current = min(self.current + 1, self.max_delay)
        elif u < self.p_up + self.p_down:
            self.current = max(self.current - 1, 0)
        return self.current

    def fresh(self) -> "RandomWalkDelay":
        return RandomWalkDelay(self.max_delay, self.p_up, self.p_down)


DelayProcess = ConstantDelay | IidDelay | RandomWalkDelay


def delay_step(process: DelayProcess, rng) -> int:
    """Draw the next delay from ``process`` (mutates walk state)."""
    return process.step(rng)


def copy_process(process: DelayProcess) -> DelayProcess:
    return copy.deepcopy(process)


# ---------------------------------------------------------------------------
# Queue bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueueState:
    """Windows of the ``M`` most recent decisions and their delays at time ``t``."""

    t: int
    actions: tuple
    delays: tuple
    max_delay: int = field(default=0)

    def __post_init__(self):
        m = self.max_delay
        if len(self.actions) != m or len(self.delays) != m:
            raise QueueConsistencyError(
                f"windows must have length {m}, got {len(self.actions)} and {len(self.delays)}"
            )

    @classmethod
    def initial(cls, default_queue: Sequence[int], max_delay: int) -> "QueueState":
        if len(default_queue) != max_delay:
            raise DomainError(f"default queue must have length {max_delay}")
        return cls(0, tuple(int(a) for a in default_queue), (max_delay,) * max_delay, max_delay)

    def push(self, action: int, delay: int) -> "QueueState":
        delay = _check_delay(delay, self.max_delay)
        if self.max_delay == 0:
            return QueueState(self.t + 1, (), (), 0)
        return QueueState(
            self.t + 1,
            self.actions[1:] + (int(action),),
            self.delays[1:] + (delay,),
            self.max_delay,
        )

    def slot(self, time: int) -> int:
        i = time - (self.t - self.max_delay)
        if not 0 <= i < self.max_delay:
            raise QueueConsistencyError(f"time {time} not covered by window at t={self.t}")
        return i

    def action_at(self, time: int) -> int:
        return self.actions[self.slot(time)]

    def delay_at(self, time: int) -> int:
        return self.delays[self.slot(time)]


def earliest_execution_time(t: int, z: int, max_delay: int) -> int:
    z = _check_delay(z, max_delay)
    if t < -max_delay:
        raise DomainError(f"time {t} precedes the virtual window")
    return t + z


def effective_decision_time(t: int, window: QueueState, z_t: int) -> int:
    """Latest decision time in ``[t - M, t]`` whose action is executable at ``t``."""
    if window.t != t:
        raise QueueConsistencyError(f"window is at t={window.t}, asked about t={t}")
    z_t = _check_delay(z_t, window.max_delay)
    if z_t == 0:
        return t
    for i in range(window.max_delay - 1, -1, -1):
        t_prime = t - window.max_delay + i
        if t_prime + window.delays[i] <= t:
            return t_prime
    raise QueueConsistencyError(f"no executable decision at t={t}")


def resolve_pending_queue(t: int, z_t: int, window: QueueState) -> list[int]:
    """Actions expected to execute at ``t, ..., t + z_t - 1``.

    Only decisions already in the window take part; the decision made at
    ``t`` cannot reach any of these slots.
    """
    if window.t != t:
        raise QueueConsistencyError(f"window is at t={window.t}, asked about t={t}")
    z_t = _check_delay(z_t, window.max_delay)
    m = window.max_delay
    pending = []
    i_best = -1
    for u in range(t, t + z_t):
        # the feasible set only grows with u, so scan forward from the last hit
        for i in range(m - 1, i_best, -1):
            if t - m + i + window.delays[i] <= u:
                i_best = i
                break
        if i_best < 0:
            raise QueueConsistencyError(f"no executable decision for slot {u} at t={t}")
        pending.append(window.actions[i_best])
    return pending


def switch_time(delays: Sequence[int], max_delay: Optional[int] = None) -> int:
    """First step at which an agent decision executes: ``min_i (z_i + i)``."""
    m = len(delays) if max_delay is None else max_delay
    if len(delays) != m:
        raise DomainError(f"expected {m} delays, got {len(delays)}")
    if m == 0:
        return 0
    return min(_check_delay(z, m) + i for i, z in enumerate(delays))


def decision_times(delays: Sequence[int], max_delay: int) -> list[int]:
    """Effective decision times for a whole delay sequence.

    Negative values point at virtual pre-episode slots; ``tau = -M + i``
    executes the default action ``abar[i]``.
    """
    window = QueueState.initial([0] * max_delay, max_delay)
    taus = []
    for t, z in enumerate(delays):
        taus.append(effective_decision_time(t, window, z))
        window = window.push(0, z)
    return taus
