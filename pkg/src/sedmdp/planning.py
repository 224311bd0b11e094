"""Delay-aware planning agents at tabular scale.

The delayed agent resolves the actions already committed for the next
``z_t`` steps, rolls its forward model through them to estimate the state at
which the new decision will take effect, and plans from there.  The
oblivious baseline plans from the observed state.  Planners are plain UCT
(or exact expectimax to a fixed depth) over a tabular forward model, or a
greedy read-out of a tabular Q-function.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .delays import QueueState, decision_times, resolve_pending_queue
from .errors import DomainError, QueueConsistencyError
from .mdp import MdpSpec
from .sed import EpisodeRecord, StepRecord

AGENT_KINDS = ("delayed-mcts", "oblivious-mcts", "delayed-q", "oblivious-q")


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    done: bool = False


# ---------------------------------------------------------------------------
# Forward models
# ---------------------------------------------------------------------------


class ForwardModel:
    """Next-state predictor.  ``mode`` prediction returns the most likely
    successor (lowest index on ties), ``sample`` draws one."""

    n_states: int
    n_actions: int
    gamma: float
    prediction: str = "mode"
    version: int = 0

    def probs(self, s: int, a: int) -> np.ndarray:
        raise NotImplementedError

    def transition_table(self) -> np.ndarray:
        raise NotImplementedError

    def reward_table(self) -> np.ndarray:
        raise NotImplementedError

    def is_terminal(self, s: int) -> bool:
        raise NotImplementedError

    def predict(self, s: int, a: int, rng=None) -> int:
        p = self.probs(s, a)
        if self.prediction == "mode":
            return int(np.argmax(p))
        u = rng.random()
        i = int(np.searchsorted(np.cumsum(p), u, side="right"))
        return min(i, int(np.flatnonzero(p)[-1]))

    def sampler_tables(self):
        """``(cdfs, rewards, terminal)`` as plain lists, cached per model version."""
        cached = getattr(self, "_tables", None)
        if cached is not None and cached[0] == self.version:
            return cached[1]
        P = self.transition_table()
        cdf = np.cumsum(P, axis=2)
        cdf[:, :, -1] = np.inf
        tables = (
            cdf.tolist(),
            self.reward_table().tolist(),
            frozenset(s for s in range(self.n_states) if self.is_terminal(s)),
        )
        self._tables = (self.version, tables)
        return tables


class ExactModel(ForwardModel):
    def __init__(self, mdp: MdpSpec, prediction: str = "mode"):
        if prediction not in ("mode", "sample"):
            raise DomainError(f"unknown prediction mode {prediction!r}")
        self.mdp = mdp
        self.n_states, self.n_actions, self.gamma = mdp.n_states, mdp.n_actions, mdp.gamma
        self.prediction = prediction
        self.version = 0

    def probs(self, s, a):
        return self.mdp.P[s, a]

    def transition_table(self):
        return self.mdp.P

    def reward_table(self):
        return self.mdp.r

    def is_terminal(self, s):
        return self.mdp.is_terminal(s)


class TabularModel(ForwardModel):
    """Counts-based model with Laplace smoothing ``alpha``."""

    def __init__(self, n_states: int, n_actions: int, gamma: float, alpha: float = 1.0,
                 prediction: str = "mode"):
        if alpha < 0:
            raise DomainError("smoothing must be nonnegative")
        if prediction not in ("mode", "sample"):
            raise DomainError(f"unknown prediction mode {prediction!r}")
        self.n_states, self.n_actions, self.gamma = n_states, n_actions, gamma
        self.alpha = float(alpha)
        self.prediction = prediction
        self.counts = np.zeros((n_states, n_actions, n_states))
        self.reward_sum = np.zeros((n_states, n_actions))
        self.terminal: set[int] = set()
        self.version = 0

    def update(self, tr: Transition) -> None:
        if not (0 <= tr.s < self.n_states and 0 <= tr.a < self.n_actions and 0 <= tr.s_next < self.n_states):
            raise DomainError(f"transition {tr} references invalid ids")
        self.counts[tr.s, tr.a, tr.s_next] += 1
        self.reward_sum[tr.s, tr.a] += tr.r
        if tr.done:
            self.terminal.add(int(tr.s_next))
        self.version += 1

    def visits(self) -> np.ndarray:
        return self.counts.sum(axis=2)

    def transition_table(self):
        n = self.visits()[:, :, None]
        denom = n + self.alpha * self.n_states
        uniform = np.full_like(self.counts, 1.0 / self.n_states)
        with np.errstate(invalid="ignore", divide="ignore"):
            P = np.where(denom > 0, (self.counts + self.alpha) / np.where(denom > 0, denom, 1.0), uniform)
        for s in self.terminal:
            P[s] = 0.0
            P[s, :, s] = 1.0
        return P

    def reward_table(self):
        n = self.visits()
        r = np.divide(self.reward_sum, n, out=np.zeros_like(self.reward_sum), where=n > 0)
        r[list(self.terminal)] = 0.0
        return r

    def probs(self, s, a):
        return self.transition_table()[s, a]

    def is_terminal(self, s):
        return s in self.terminal


def learn_model(transitions: Sequence[Transition], n_states: int, n_actions: int, alpha: float = 1.0,
                gamma: float = 0.95, prediction: str = "mode") -> TabularModel:
    model = TabularModel(n_states, n_actions, gamma, alpha, prediction)
    for tr in transitions:
        model.update(Transition(*tr))
    return model


def predict_future_state(s_t: int, pending: Sequence[int], model: ForwardModel, rng=None) -> int:
    """Chain the forward model through the pending actions."""
    s = int(s_t)
    for a in pending:
        s = model.predict(s, int(a), rng)
    return s


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------


@dataclass
class MctsConfig:
    n_simulations: int = 64
    uct_c: float = math.sqrt(2.0)
    rollout_depth: int = 12
    expansion: str = "uct"  # or "expectimax"

    def __post_init__(self):
        if self.n_simulations < 1:
            raise DomainError("n_simulations must be at least 1")
        if self.rollout_depth < 0:
            raise DomainError("rollout_depth must be nonnegative")
        if self.expansion not in ("uct", "expectimax"):
            raise DomainError(f"unknown expansion mode {self.expansion!r}")


@dataclass
class PlanResult:
    action: int
    visits: np.ndarray
    values: np.ndarray


def expectimax_values(model: ForwardModel, depth: int) -> np.ndarray:
    """Exact depth-limited action values ``Q_depth[s, a]`` for every state."""
    P, r = model.transition_table(), model.reward_table()
    n_s = model.n_states
    term = np.array([model.is_terminal(s) for s in range(n_s)])
    v = np.zeros(n_s)
    q = np.zeros((n_s, model.n_actions))
    for _ in range(depth):
        q = r + model.gamma * P @ v
        v = np.where(term, 0.0, q.max(axis=1))
    return q


def _argmax_lowest(x) -> int:
    return int(np.argmax(x))


def _uct(root: int, model: ForwardModel, cfg: MctsConfig, rng) -> PlanResult:
    cdfs, rewards, terminal = model.sampler_tables()
    n_a = model.n_actions
    g = model.gamma
    horizon = cfg.rollout_depth
    c = cfg.uct_c
    rand = rng.random
    nodes: dict = {}

    def step(s, a):
        return bisect.bisect_right(cdfs[s][a], rand())

    def rollout(s, depth):
        ret, disc = 0.0, 1.0
        while depth < horizon and s not in terminal:
            a = int(rand() * n_a)
            ret += disc * rewards[s][a]
            disc *= g
            s = step(s, a)
            depth += 1
        return ret

    def simulate(s, depth):
        if depth >= horizon or s in terminal:
            return 0.0
        node = nodes.get((s, depth))
        if node is None:
            node = nodes[(s, depth)] = [0, [0] * n_a, [0.0] * n_a]
        counts, totals = node[1], node[2]
        if 0 in counts:
            a = counts.index(0)
            ret = rewards[s][a] + g * rollout(step(s, a), depth + 1)
        else:
            log_n = math.log(node[0])
            best, a = -math.inf, 0
            for b in range(n_a):
                score = totals[b] / counts[b] + c * math.sqrt(log_n / counts[b])
                if score > best:
                    best, a = score, b
            ret = rewards[s][a] + g * simulate(step(s, a), depth + 1)
        node[0] += 1
        counts[a] += 1
        totals[a] += ret
        return ret

    for _ in range(cfg.n_simulations):
        simulate(root, 0)
    node = nodes.get((root, 0))
    if node is None:
        # terminal root or zero depth: nothing to search
        visits = np.zeros(n_a)
        visits[0] = 1.0
        return PlanResult(0, visits, np.zeros(n_a))
    counts = np.array(node[1], dtype=float)
    values = np.divide(np.array(node[2]), counts, out=np.zeros(n_a), where=counts > 0)
    action = _argmax_lowest(counts)
    return PlanResult(action, counts / counts.sum(), values)


def mcts_plan(state: int, model: ForwardModel, cfg: MctsConfig, rng=None) -> PlanResult:
    """Choose an action at ``state``.

    ``uct`` runs ``n_simulations`` UCT iterations with random rollouts up to
    ``rollout_depth`` and picks the most visited root action.  ``expectimax``
    computes exact depth-limited values and returns a point-mass visit
    distribution on the best action.
    """
    if cfg.expansion == "expectimax":
        q = expectimax_values(model, cfg.rollout_depth)[state]
        a = _argmax_lowest(q)
        visits = np.zeros(model.n_actions)
        visits[a] = 1.0
        return PlanResult(a, visits, q)
    return _uct(int(state), model, cfg, rng)


class MctsPlanner:
    """Planner over a forward model; ``epsilon`` adds uniform exploration."""

    def __init__(self, model: ForwardModel, cfg: MctsConfig, epsilon: float = 0.0):
        self.model = model
        self.cfg = cfg
        self.epsilon = epsilon
        self._q = None
        self._q_version = None

    def __call__(self, state: int, rng) -> int:
        if self.epsilon > 0 and rng.random() < self.epsilon:
            return int(rng.random() * self.model.n_actions)
        if self.cfg.expansion == "expectimax":
            if self._q_version != self.model.version or self._q is None:
                self._q = expectimax_values(self.model, self.cfg.rollout_depth)
                self._q_version = self.model.version
            return _argmax_lowest(self._q[state])
        return mcts_plan(state, self.model, self.cfg, rng).action


class QPlanner:
    """Epsilon-greedy read-out of a tabular Q-function, trained by Q-learning."""

    def __init__(self, n_states: int, n_actions: int, gamma: float, lr: float = 0.1,
                 epsilon: float = 0.1):
        self.q = np.zeros((n_states, n_actions))
        self.gamma, self.lr, self.epsilon = gamma, lr, epsilon

    def __call__(self, state: int, rng) -> int:
        if self.epsilon > 0 and rng.random() < self.epsilon:
            return int(rng.random() * self.q.shape[1])
        return _argmax_lowest(self.q[state])

    def learn(self, transitions: Sequence[Transition]) -> None:
        for tr in transitions:
            target = tr.r if tr.done else tr.r + self.gamma * self.q[tr.s_next].max()
            self.q[tr.s, tr.a] += self.lr * (target - self.q[tr.s, tr.a])


def bootstrap_initial_queue(s0: int, model: ForwardModel, planner, max_delay: int, rng) -> list[int]:
    """Plan the opening ``M`` actions by rolling the forward model from ``s_0``."""
    actions = []
    s = int(s0)
    for _ in range(max_delay):
        a = int(planner(s, rng))
        actions.append(a)
        s = model.predict(s, a, rng)
    return actions


# ---------------------------------------------------------------------------
# Episode post-processing
# ---------------------------------------------------------------------------


def postprocess_episode(record: EpisodeRecord, delays: Optional[Sequence[int]] = None) -> list[Transition]:
    """Re-label every step with the action that actually executed.

    Effective decision times are recomputed from the delays; steps before the
    switch carry default-queue actions.
    """
    delays = record.delays if delays is None else list(delays)
    if len(delays) != record.length:
        raise DomainError(f"{len(delays)} delays for an episode of length {record.length}")
    m = record.max_delay
    taus = decision_times(delays, m)
    out = []
    for st, tau in zip(record.steps, taus):
        if tau > st.t:
            raise DomainError(f"effective decision time {tau} after step {st.t}")
        a = record.default_queue[tau + m] if tau < 0 else record.steps[tau].a_decided
        out.append(Transition(st.s, a, st.r, st.s_next, st.done))
    return out


def raw_transitions(record: EpisodeRecord) -> list[Transition]:
    """Transitions labelled with the decided action, as a delay-oblivious learner stores them."""
    return [Transition(st.s, st.a_decided, st.r, st.s_next, st.done) for st in record.steps]


def record_from_transitions(transitions: Sequence[Transition], gamma: float = 1.0) -> EpisodeRecord:
    """Undelayed episode record whose decided actions are the given ones."""
    steps = [StepRecord(t, tr.s, 0, tr.a, t, tr.a, tr.r, tr.s_next, tr.done)
             for t, tr in enumerate(transitions)]
    return EpisodeRecord((), 0, steps, gamma)


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


@dataclass
class AgentState:
    kind: str
    max_delay: int
    model: ForwardModel
    planner: object
    queue: QueueState = None
    last_pending: list = field(default_factory=list)
    last_target: int = -1

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise DomainError(f"unknown agent kind {self.kind!r}")

    @property
    def delayed(self) -> bool:
        return self.kind.startswith("delayed")

    def begin_episode(self, s0: int, rng) -> list[int]:
        """Choose the default queue for a new episode and reset the windows.

        Exactly one draw is taken from ``rng`` whatever the agent kind, so
        agents sharing a stream stay aligned after this call.
        """
        rng = np.random.default_rng(int(rng.integers(2**63)))
        if self.delayed:
            default = bootstrap_initial_queue(s0, self.model, self.planner, self.max_delay, rng)
        else:
            default = [int(self.planner(s0, rng))] * self.max_delay if self.max_delay else []
        self.queue = QueueState.initial(default, self.max_delay)
        return default

    def act(self, s_t: int, z_t: int, rng, t: Optional[int] = None) -> int:
        if self.queue is None:
            raise QueueConsistencyError("act called before begin_episode")
        if t is not None and t != self.queue.t:
            raise QueueConsistencyError(f"agent queue at t={self.queue.t}, environment at t={t}")
        if self.delayed:
            self.last_pending = resolve_pending_queue(self.queue.t, z_t, self.queue)
            target = predict_future_state(s_t, self.last_pending, self.model, rng)
        else:
            self.last_pending = []
            target = s_t
        self.last_target = target
        a = int(self.planner(target, rng))
        self.queue = self.queue.push(a, z_t)
        return a

    def learn(self, record: EpisodeRecord, update_model: bool = True) -> None:
        """Update the learned parts from a finished episode.

        Delay-aware agents learn from post-processed transitions, oblivious
        ones from transitions labelled with their own decisions.
        """
        transitions = postprocess_episode(record) if self.delayed else raw_transitions(record)
        if update_model and isinstance(self.model, TabularModel):
            for tr in transitions:
                self.model.update(tr)
        if isinstance(self.planner, QPlanner):
            self.planner.learn(transitions)


def make_agent(kind: str, mdp: MdpSpec, max_delay: int, forward_model: str = "learned",
               mcts: Optional[MctsConfig] = None, alpha: float = 1.0, prediction: str = "mode",
               lr: float = 0.1, epsilon: float = 0.1) -> AgentState:
    if forward_model == "exact":
        model: ForwardModel = ExactModel(mdp, prediction)
    elif forward_model == "learned":
        model = TabularModel(mdp.n_states, mdp.n_actions, mdp.gamma, alpha, prediction)
    else:
        raise DomainError(f"unknown forward model {forward_model!r}")
    if kind.endswith("mcts"):
        # a learned model starts uninformative, so exploration has to come from somewhere
        planner = MctsPlanner(model, mcts or MctsConfig(), epsilon if forward_model == "learned" else 0.0)
    elif kind.endswith("-q"):
        planner = QPlanner(mdp.n_states, mdp.n_actions, mdp.gamma, lr, epsilon)
    else:
        raise DomainError(f"unknown agent kind {kind!r}")
    return AgentState(kind, max_delay, model, planner)
