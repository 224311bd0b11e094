"""Experiment configuration, seeded execution and result persistence."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from scipy import stats

from .delays import ConstantDelay, IidDelay, RandomWalkDelay
from .envs import BUILTINS, load_mdp, make_builtin
from .errors import ConfigError, DomainError, ValidationError
from .mdp import MdpSpec
from .planning import AGENT_KINDS, MctsConfig, make_agent
from .rng import stream
from .sed import EpisodeRecord, SedConfig, SedEnv

RESULT_COLUMNS = ("run_id", "env", "agent", "delay_kind", "M", "seed", "episode", "return", "steps")
LOG_KEYS = ("t", "s", "z", "a_decided", "tau", "a_executed", "r")


# ---------------------------------------------------------------------------
# Delay specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DelaySpec:
    kind: str
    max_delay: int
    probs: tuple = ()
    p: float = 0.2

    def process(self):
        if self.kind == "constant":
            return ConstantDelay(self.max_delay)
        if self.kind == "iid":
            return IidDelay(self.probs)
        return RandomWalkDelay(self.max_delay, self.p, self.p)

    def __str__(self):
        if self.kind == "constant":
            return f"constant:{self.max_delay}"
        if self.kind == "iid":
            return "iid:" + json.dumps(list(self.probs))
        return f"walk:{self.max_delay},{self.p!r}"


def parse_delay(text: str) -> DelaySpec:
    """Parse ``constant:M``, ``iid:[p0,...,pM]`` or ``walk:M[,p]``."""
    kind, sep, arg = str(text).partition(":")
    if not sep:
        raise ConfigError(f"delay {text!r}: expected kind:arguments")
    try:
        if kind == "constant":
            m = int(arg)
            if m < 0:
                raise ValueError("M must be nonnegative")
            return DelaySpec("constant", m)
        if kind == "iid":
            probs = tuple(float(x) for x in json.loads(arg))
            IidDelay(probs)
            return DelaySpec("iid", len(probs) - 1, probs)
        if kind == "walk":
            parts = arg.split(",")
            m = int(parts[0])
            p = float(parts[1]) if len(parts) > 1 else 0.2
            RandomWalkDelay(m, p, p)
            return DelaySpec("walk", m, p=p)
    except (ValueError, TypeError, DomainError, json.JSONDecodeError) as exc:
        raise ConfigError(f"delay {text!r}: {exc}") from None
    raise ConfigError(f"delay {text!r}: unknown kind {kind!r} (constant, iid, walk)")


def resolve_env(env) -> MdpSpec:
    """Builtin name, document path, or ``{"builtin": name, "params": {...}}`` / ``{"path": p}``."""
    try:
        if isinstance(env, str):
            return make_builtin(env) if env in BUILTINS else load_mdp(env)
        if isinstance(env, dict) and "builtin" in env:
            return make_builtin(env["builtin"], **env.get("params", {}))
        if isinstance(env, dict) and "path" in env:
            return load_mdp(env["path"])
    except (DomainError, ValidationError, TypeError) as exc:
        raise ConfigError(f"env: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"env: cannot read {exc.filename}") from None
    raise ConfigError("env must be a builtin name, a path, or an object with 'builtin' or 'path'")


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    env: object
    delay: str
    agents: list
    episodes: int = 32
    seeds: list = field(default_factory=lambda: [0])
    master_seed: int = 0
    planner: dict = field(default_factory=dict)
    forward_model: str = "learned"
    alpha: float = 1.0
    prediction: str = "mode"
    lr: float = 0.1
    epsilon: float = 0.1
    max_steps: int = 100
    run_id: str = "run"
    out: Optional[str] = None
    M: Optional[int] = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        missing = [k for k in ("env", "delay", "agents") if k not in doc]
        if missing:
            raise ConfigError(f"missing config keys: {', '.join(missing)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        base = Path(path).parent
        if isinstance(doc, dict) and isinstance(doc.get("env"), dict) and "path" in doc["env"]:
            doc["env"] = dict(doc["env"], path=str(base / doc["env"]["path"]))
        elif isinstance(doc, dict) and isinstance(doc.get("env"), str) and doc["env"] not in BUILTINS:
            doc["env"] = str(base / doc["env"])
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def delay_spec(self) -> DelaySpec:
        return parse_delay(self.delay)

    def mcts_config(self) -> MctsConfig:
        try:
            return MctsConfig(**self.planner)
        except TypeError as exc:
            raise ConfigError(f"planner: {exc}") from None
        except DomainError as exc:
            raise ConfigError(f"planner: {exc}") from None

    def env_name(self) -> str:
        if isinstance(self.env, str):
            return self.env
        if "builtin" in self.env:
            return self.env["builtin"]
        return Path(self.env["path"]).stem

    def build_mdp(self) -> MdpSpec:
        return resolve_env(self.env)

    def validate(self) -> None:
        if not isinstance(self.env, (str, dict)) or (
            isinstance(self.env, dict) and not ({"builtin", "path"} & set(self.env))
        ):
            raise ConfigError("env must be a builtin name, a path, or an object with 'builtin' or 'path'")
        spec = self.delay_spec
        if self.M is not None and self.M != spec.max_delay:
            raise ConfigError(f"M={self.M} disagrees with delay {self.delay!r} (M={spec.max_delay})")
        if not isinstance(self.agents, list) or not self.agents:
            raise ConfigError("at least one agent is required")
        bad = [a for a in self.agents if a not in AGENT_KINDS]
        if bad:
            raise ConfigError(f"unknown agents {bad}; choose from {list(AGENT_KINDS)}")
        if len(set(self.agents)) != len(self.agents):
            raise ConfigError("agents must be distinct")
        if not isinstance(self.episodes, int) or self.episodes < 1:
            raise ConfigError("episodes must be a positive integer")
        if not isinstance(self.seeds, list) or not self.seeds or any(
            not isinstance(s, int) or s < 0 for s in self.seeds
        ):
            raise ConfigError("seeds must be a nonempty list of nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError("master_seed must be a nonnegative integer")
        if not isinstance(self.max_steps, int) or self.max_steps < 1:
            raise ConfigError("max_steps must be a positive integer")
        if self.forward_model not in ("exact", "learned"):
            raise ConfigError("forward_model must be 'exact' or 'learned'")
        if self.prediction not in ("mode", "sample"):
            raise ConfigError("prediction must be 'mode' or 'sample'")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if not 0 <= self.epsilon <= 1 or not 0 < self.lr <= 1:
            raise ConfigError("epsilon must lie in [0, 1] and lr in (0, 1]")
        self.mcts_config()
        self.build_mdp()


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


@dataclass
class ResultRow:
    run_id: str
    env: str
    agent: str
    delay_kind: str
    M: int
    seed: int
    episode: int
    ret: float
    steps: int

    def as_tuple(self):
        return (self.run_id, self.env, self.agent, self.delay_kind, self.M, self.seed,
                self.episode, repr(float(self.ret)), self.steps)


@dataclass
class RunOutcome:
    agent: str
    seed: int
    rows: list
    records: list


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    outcomes: list

    @property
    def rows(self) -> list:
        return [row for o in self.outcomes for row in o.rows]

    def returns(self, agent: str, discounted: bool = False) -> dict:
        """``{seed: [return per episode]}`` for one agent."""
        return {
            o.seed: [rec.discounted_return if discounted else rec.episode_return for rec in o.records]
            for o in self.outcomes if o.agent == agent
        }

    def paired_difference(self, agent_a: str, agent_b: str, confidence: float = 0.95) -> "PairedComparison":
        """Per-seed mean return of ``agent_a`` minus ``agent_b`` with a t interval."""
        ra, rb = self.returns(agent_a), self.returns(agent_b)
        diffs = [math.fsum(ra[s]) / len(ra[s]) - math.fsum(rb[s]) / len(rb[s]) for s in self.config.seeds]
        return paired_interval(diffs, confidence)

    def results_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in self.rows:
            writer.writerow(row.as_tuple())
        return buf.getvalue()

    def log_jsonl(self, outcome: RunOutcome) -> str:
        lines = []
        for ep, rec in enumerate(outcome.records):
            for st in rec.steps:
                obj = {"episode": ep, "t": st.t, "s": st.s, "z": st.z, "a_decided": st.a_decided,
                       "tau": st.tau, "a_executed": st.a_executed, "r": st.r}
                lines.append(json.dumps(obj, separators=(",", ":")))
        return "".join(line + "\n" for line in lines)

    def summary(self) -> dict:
        agents = {}
        for agent in self.config.agents:
            outs = [o for o in self.outcomes if o.agent == agent]
            recs = [r for o in outs for r in o.records]
            agents[agent] = {
                "episodes": len(recs),
                "mean_return": math.fsum(r.episode_return for r in recs) / len(recs),
                "mean_discounted_return": math.fsum(r.discounted_return for r in recs) / len(recs),
                "interactions": sum(r.length for r in recs),
            }
        comparisons = {}
        if len(self.config.seeds) > 1:
            for i, a in enumerate(self.config.agents):
                for b in self.config.agents[i + 1:]:
                    c = self.paired_difference(a, b)
                    comparisons[f"{a} - {b}"] = {"mean": c.mean, "ci95": [c.low, c.high]}
        config = self.config.to_dict()
        config.pop("out")
        return {"run_id": self.config.run_id, "config": config, "agents": agents, "comparisons": comparisons}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "logs").mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.results_csv(), encoding="utf-8")
        for o in self.outcomes:
            (out / "logs" / f"{o.agent}_seed{o.seed}.jsonl").write_text(self.log_jsonl(o), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=1, sort_keys=True) + "\n",
                                          encoding="utf-8")
        return out


@dataclass(frozen=True)
class PairedComparison:
    mean: float
    low: float
    high: float
    n: int

    @property
    def excludes_zero(self) -> bool:
        return self.low > 0 or self.high < 0


def paired_interval(diffs, confidence: float = 0.95) -> PairedComparison:
    """Student-t interval for the mean of paired differences."""
    n = len(diffs)
    if n < 2:
        raise DomainError("need at least two paired differences")
    mean = math.fsum(diffs) / n
    sd = math.sqrt(math.fsum((d - mean) ** 2 for d in diffs) / (n - 1))
    half = float(stats.t.ppf(0.5 + confidence / 2, n - 1)) * sd / math.sqrt(n)
    return PairedComparison(mean, mean - half, mean + half, n)


def run_single(config: ExperimentConfig, agent_kind: str, seed: int, mdp: Optional[MdpSpec] = None) -> RunOutcome:
    """Train and evaluate one agent on one seed, episode by episode."""
    mdp = mdp if mdp is not None else config.build_mdp()
    spec = config.delay_spec
    m = spec.max_delay
    master = config.master_seed
    sed = SedConfig(mdp, m, spec.process(), (0,) * m)
    env = SedEnv(sed, max_steps=config.max_steps, delay_rng=stream(master, "delay", seed))
    agent = make_agent(agent_kind, mdp, m, config.forward_model, config.mcts_config(),
                       config.alpha, config.prediction, config.lr, config.epsilon)
    rows, records = [], []
    for ep in range(config.episodes):
        env_rng = stream(master, "env", seed, ep)
        agent_rng = stream(master, "agent:" + agent_kind, seed, ep)
        s, z = env.reset(env_rng, lambda s0: agent.begin_episode(s0, agent_rng))
        while not env.done:
            a = agent.act(s, z, agent_rng, t=env.queue.t)
            s, _, _ = env.step(a, env_rng)
            z = env.z
        record: EpisodeRecord = env.record
        agent.learn(record)
        records.append(record)
        rows.append(ResultRow(config.run_id, config.env_name(), agent_kind, spec.kind, m, seed, ep,
                              record.episode_return, record.length))
    return RunOutcome(agent_kind, seed, rows, records)


def run_experiment(config: ExperimentConfig, threads: int = 1, write: bool = True) -> ExperimentResult:
    """Run every (agent, seed) pair, fanning out over ``threads`` workers.

    Output order is (agent in config order, seed in config order) regardless
    of scheduling.  Files are written when ``config.out`` is set.
    """
    config.validate()
    if threads < 1:
        raise ConfigError("threads must be at least 1")
    mdp = config.build_mdp()
    jobs = [(a, s) for a in config.agents for s in config.seeds]
    if threads == 1:
        outcomes = [run_single(config, a, s, mdp) for a, s in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda job: run_single(config, job[0], job[1], mdp), jobs))
    result = ExperimentResult(config, outcomes)
    if write and config.out:
        result.write(config.out)
    return result


def default_threads() -> int:
    return max(1, min(4, os.cpu_count() or 1))
