"""Built-in toy environments and the JSON MDP document format."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DomainError, ValidationError
from .mdp import MdpSpec

FORMAT_VERSION = 1

LEFT, RIGHT = 0, 1
UP, EAST, DOWN, WEST = 0, 1, 2, 3
GRID_MOVES = {UP: (0, 1), EAST: (1, 0), DOWN: (0, -1), WEST: (-1, 0)}


def make_chain(n: int = 5, slip: float = 0.0, gamma: float = 0.95) -> MdpSpec:
    """Chain ``0 .. n-1`` starting at 0; entering ``n-1`` pays 1 and ends the episode.

    The intended move succeeds with probability ``1 - slip`` and reverses
    otherwise.  Moving left from 0 stays put.
    """
    if n < 2:
        raise DomainError("chain needs at least 2 states")
    if not 0.0 <= slip <= 0.5:
        raise DomainError("slip must lie in [0, 0.5]")
    goal = n - 1
    P = np.zeros((n, 2, n))
    for s in range(n):
        if s == goal:
            P[s, :, s] = 1.0
            continue
        left, right = max(s - 1, 0), s + 1
        P[s, LEFT, left] += 1.0 - slip
        P[s, LEFT, right] += slip
        P[s, RIGHT, right] += 1.0 - slip
        P[s, RIGHT, left] += slip
    r = P[:, :, goal].copy()
    r[goal] = 0.0
    mu = np.zeros(n)
    mu[0] = 1.0
    return MdpSpec(P, r, mu, gamma, frozenset({goal}), name=f"chain{n}")


def make_gridworld(w: int = 4, h: int = 4, slip: float = 0.1, goal=None, pits=(), start=(0, 0),
                   gamma: float = 0.95) -> MdpSpec:
    """Grid with actions UP/EAST/DOWN/WEST; state index is ``y * w + x``.

    Each action goes its way with probability ``1 - slip`` and veers to either
    perpendicular direction with probability ``slip / 2``.  Bumping into the
    border leaves the agent in place.  Entering the goal (default: the far
    corner) pays +1, entering a pit pays -1; both end the episode.
    """
    if w < 2 or h < 2:
        raise DomainError("grid dimensions must be at least 2")
    if not 0.0 <= slip <= 1.0:
        raise DomainError("slip must lie in [0, 1]")
    goal = (w - 1, h - 1) if goal is None else tuple(goal)
    pits = {tuple(p) for p in pits}
    start = tuple(start)
    for cell in [goal, start, *pits]:
        if not (0 <= cell[0] < w and 0 <= cell[1] < h):
            raise DomainError(f"cell {cell} outside the {w}x{h} grid")
    if goal in pits:
        raise DomainError(f"goal {goal} overlaps a pit")

    def idx(x, y):
        return y * w + x

    n = w * h
    payoff = np.zeros(n)
    payoff[idx(*goal)] = 1.0
    for p in pits:
        payoff[idx(*p)] = -1.0
    terminal = {idx(*goal)} | {idx(*p) for p in pits}

    P = np.zeros((n, 4, n))
    for y in range(h):
        for x in range(w):
            s = idx(x, y)
            if s in terminal:
                P[s, :, s] = 1.0
                continue
            for a in range(4):
                for direction, prob in ((a, 1.0 - slip), ((a + 1) % 4, slip / 2), ((a - 1) % 4, slip / 2)):
                    if prob == 0.0:
                        continue
                    dx, dy = GRID_MOVES[direction]
                    nx, ny = x + dx, y + dy
                    if not (0 <= nx < w and 0 <= ny < h):
                        nx, ny = x, y
                    P[s, a, idx(nx, ny)] += prob
    r = P @ payoff
    r[list(terminal)] = 0.0
    mu = np.zeros(n)
    mu[idx(*start)] = 1.0
    return MdpSpec(P, r, mu, gamma, frozenset(terminal), name=f"grid{w}x{h}")


def make_branch_gridworld(slip: float = 0.05, gamma: float = 0.95, length: int = 9,
                          branch: int = 6) -> MdpSpec:
    """Corridor along the bottom row with a single exit upwards at ``branch``.

    The rest of the upper row is pits and the corridor ends in a pit, so an
    agent that keeps going after the branch pays -1.  Acting on the state
    observed several steps ago overshoots the exit.
    """
    if not 1 <= branch < length - 1:
        raise DomainError("branch must be strictly inside the corridor")
    pits = [(x, 1) for x in range(length) if x != branch] + [(length - 1, 0)]
    mdp = make_gridworld(length, 2, slip, goal=(branch, 1), pits=pits, start=(0, 0), gamma=gamma)
    mdp.name = "branch"
    return mdp


def make_bandit(rewards=(1.0, 0.0), gamma: float = 0.0) -> MdpSpec:
    """Single state, one arm per reward."""
    k = len(rewards)
    return MdpSpec(np.ones((1, k, 1)), np.array([rewards], dtype=float), [1.0], gamma, name="bandit")


BUILTINS = {
    "chain": make_chain,
    "gridworld": make_gridworld,
    "branch": make_branch_gridworld,
    "bandit": make_bandit,
}


def make_builtin(name: str, **params) -> MdpSpec:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise DomainError(f"unknown builtin environment {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# Document format
# ---------------------------------------------------------------------------


def mdp_to_document(mdp: MdpSpec) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "P": mdp.P.tolist(),
        "r": mdp.r.tolist(),
        "mu": mdp.mu.tolist(),
        "gamma": mdp.gamma,
        "terminal": sorted(mdp.terminal),
    }
    if mdp.name:
        doc["name"] = mdp.name
    return doc


def mdp_from_document(doc: dict) -> MdpSpec:
    if not isinstance(doc, dict):
        raise ValidationError("MDP document must be a JSON object")
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported format_version {version!r}")
    missing = [k for k in ("n_states", "n_actions", "P", "r", "mu", "gamma") if k not in doc]
    if missing:
        raise ValidationError(f"missing keys: {', '.join(missing)}")
    n_s, n_a = doc["n_states"], doc["n_actions"]
    if not (isinstance(n_s, int) and isinstance(n_a, int) and n_s > 0 and n_a > 0):
        raise ValidationError("n_states and n_actions must be positive integers")
    try:
        P = np.array(doc["P"], dtype=float)
        r = np.array(doc["r"], dtype=float)
        mu = np.array(doc["mu"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"ragged or non-numeric table: {exc}") from None
    if P.shape != (n_s, n_a, n_s):
        raise ValidationError(f"P has shape {P.shape}, expected {(n_s, n_a, n_s)}")
    return MdpSpec(P, r, mu, doc["gamma"], frozenset(doc.get("terminal", ())), doc.get("name", ""))


def loads_mdp(text: str) -> MdpSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"parse error at line {exc.lineno} column {exc.colno} (char {exc.pos}): {exc.msg}"
        ) from None
    return mdp_from_document(doc)


def load_mdp(path) -> MdpSpec:
    return loads_mdp(Path(path).read_text(encoding="utf-8"))


def dump_mdp(mdp: MdpSpec, path) -> None:
    Path(path).write_text(json.dumps(mdp_to_document(mdp), indent=1) + "\n", encoding="utf-8")
