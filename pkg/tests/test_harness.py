import csv
import io
import json
import math

import numpy as np
import pytest

from sedmdp.cli import main
from sedmdp.errors import ConfigError
from sedmdp.harness import (
    LOG_KEYS,
    RESULT_COLUMNS,
    ExperimentConfig,
    paired_interval,
    parse_delay,
    run_experiment,
)
from sedmdp.rng import stream

BASE = {
    "env": {"builtin": "chain", "params": {"n": 4}},
    "delay": "constant:0",
    "agents": ["delayed-mcts"],
    "episodes": 1,
    "seeds": [0],
    "planner": {"n_simulations": 16, "rollout_depth": 6},
    "forward_model": "exact",
}


def cfg(**kw):
    doc = dict(BASE)
    doc.update(kw)
    return ExperimentConfig.from_dict(doc)


# -- streams ----------------------------------------------------------------------

def test_stream_identity():
    a = stream(3, "env", 1, 2).random(4)
    b = stream(3, "env", 1, 2).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, stream(3, "env", 2, 1).random(4))
    assert not np.array_equal(a, stream(3, "agent", 1, 2).random(4))
    assert not np.array_equal(a, stream(4, "env", 1, 2).random(4))
    with pytest.raises(ValueError):
        stream(0, "env", -1)


# -- configuration -------------------------------------------------------------------

@pytest.mark.parametrize("text,kind,m", [
    ("constant:5", "constant", 5), ("iid:[0.5,0.25,0.25]", "iid", 2), ("walk:5,0.2", "walk", 5), ("walk:3", "walk", 3),
])
def test_parse_delay(text, kind, m):
    spec = parse_delay(text)
    assert (spec.kind, spec.max_delay) == (kind, m)
    assert spec.process().max_delay == m


@pytest.mark.parametrize("text", ["constant", "constant:-1", "iid:[0.5,0.6]", "iid:oops", "walk:5,0.7", "gauss:1"])
def test_parse_delay_errors(text):
    with pytest.raises(ConfigError):
        parse_delay(text)


@pytest.mark.parametrize("override,match", [
    ({"agents": []}, "at least one agent"),
    ({"agents": ["greedy"]}, "unknown agents"),
    ({"agents": ["delayed-q", "delayed-q"]}, "distinct"),
    ({"episodes": 0}, "episodes"),
    ({"seeds": []}, "seeds"),
    ({"seeds": [1, 1]}, "distinct"),
    ({"delay": "constant:2", "M": 3}, "disagrees"),
    ({"forward_model": "oracle"}, "forward_model"),
    ({"planner": {"n_sims": 3}}, "planner"),
    ({"planner": {"n_simulations": 0}}, "planner"),
    ({"env": "no-such-file.json"}, "env"),
    ({"env": {"builtin": "chain", "params": {"n": 1}}}, "env"),
    ({"env": {"name": "chain"}}, "env"),
    ({"max_steps": 0}, "max_steps"),
    ({"alpha": -1.0}, "alpha"),
])
def test_invalid_config(override, match):
    with pytest.raises(ConfigError, match=match):
        cfg(**override)


def test_missing_and_unknown_keys():
    with pytest.raises(ConfigError, match="missing"):
        ExperimentConfig.from_dict({"env": "chain"})
    with pytest.raises(ConfigError, match="unknown"):
        cfg(colour="blue")


def test_invalid_config_does_no_work(tmp_path):
    out = tmp_path / "out"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(dict(BASE, agents=["nope"], out=str(out))))
    assert main(["run", "--config", str(path)]) == 2
    assert not out.exists()


def test_config_path_is_relative_to_file(tmp_path):
    from sedmdp.envs import dump_mdp, make_chain

    dump_mdp(make_chain(3), tmp_path / "m.json")
    path = tmp_path / "c.json"
    path.write_text(json.dumps(dict(BASE, env={"path": "m.json"})))
    assert ExperimentConfig.load(path).build_mdp().n_states == 3


# -- running ----------------------------------------------------------------------------

def test_single_episode_example():
    res = run_experiment(cfg(), write=False)
    assert len(res.rows) == 1
    row = res.rows[0]
    assert (row.agent, row.seed, row.episode, row.M, row.delay_kind) == ("delayed-mcts", 0, 0, 0, "constant")
    rec = res.outcomes[0].records[0]
    assert all(st.a_decided == st.a_executed for st in rec.steps)
    assert row.steps == rec.length


def test_rows_ordered_by_agent_then_seed():
    res = run_experiment(cfg(agents=["oblivious-q", "delayed-mcts"], seeds=[4, 2], episodes=2), threads=3, write=False)
    keys = [(r.agent, r.seed, r.episode) for r in res.rows]
    assert keys == [(a, s, e) for a in ("oblivious-q", "delayed-mcts") for s in (4, 2) for e in range(2)]


def test_outputs_written_and_consistent(tmp_path):
    c = cfg(delay="iid:[0.3,0.3,0.4]", agents=["delayed-mcts", "oblivious-q"], seeds=[0, 1], episodes=3,
            forward_model="learned", out=str(tmp_path))
    run_experiment(c)
    with open(tmp_path / "results.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert len(rows) == 1 + 2 * 2 * 3
    for row in rows[1:]:
        rec = dict(zip(RESULT_COLUMNS, row))
        lines = (tmp_path / "logs" / f"{rec['agent']}_seed{rec['seed']}.jsonl").read_text().splitlines()
        steps = [json.loads(x) for x in lines if json.loads(x)["episode"] == int(rec["episode"])]
        assert len(steps) == int(rec["steps"])
        assert math.fsum(s["r"] for s in steps) == pytest.approx(float(rec["return"]), abs=1e-12)
        assert set(LOG_KEYS) <= set(steps[0])
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["agents"]["delayed-mcts"]["episodes"] == 6
    assert "delayed-mcts - oblivious-q" in summary["comparisons"]


def test_determinism_across_runs_and_threads(tmp_path):
    doc = dict(BASE, delay="walk:3,0.2", agents=["delayed-mcts", "oblivious-mcts", "delayed-q"],
               seeds=[0, 1, 2], episodes=3, forward_model="learned")
    outs = []
    for i, threads in enumerate((1, 1, 4)):
        c = ExperimentConfig.from_dict(dict(doc, out=str(tmp_path / str(i))))
        run_experiment(c, threads=threads)
        files = sorted(p.relative_to(tmp_path / str(i)) for p in (tmp_path / str(i)).rglob("*.*"))
        outs.append({f: (tmp_path / str(i) / f).read_bytes() for f in files})
    assert outs[0] == outs[1] == outs[2]


def test_master_seed_changes_outputs():
    a = run_experiment(cfg(delay="iid:[0.5,0.5]", episodes=3, master_seed=0), write=False).results_csv()
    b = run_experiment(cfg(delay="iid:[0.5,0.5]", episodes=3, master_seed=1), write=False).results_csv()
    assert a != b


def test_walk_delay_carries_across_episodes():
    res = run_experiment(cfg(env={"builtin": "chain", "params": {"n": 3}}, delay="walk:4,0.4",
                             agents=["delayed-q"], episodes=40, max_steps=4), write=False)
    firsts = [rec.steps[0].z for rec in res.outcomes[0].records]
    assert firsts[0] == 4 and any(z != 4 for z in firsts[1:])


def test_paired_interval_hand_value():
    # mean 3, sample sd 1, t_{0.975, 2} = 4.302652729911275
    c = paired_interval([2.0, 3.0, 4.0])
    half = 4.302652729911275 / math.sqrt(3)
    assert (c.mean, c.low, c.high) == pytest.approx((3.0, 3.0 - half, 3.0 + half))
    assert c.excludes_zero
    assert not paired_interval([1.0, 2.0, 3.0]).excludes_zero


# -- CLI --------------------------------------------------------------------------------

def test_cli_verify_queues(capsys):
    assert main(["verify", "queues"]) == 0
    out = capsys.readouterr().out
    assert "12/12 checks passed" in out and "FAIL" not in out


def test_cli_solve_augmented(capsys, tmp_path):
    assert main(["--out", str(tmp_path), "solve-augmented", "--env", "chain", "--M", "1", "--tol", "1e-12"]) == 0
    report = json.loads((tmp_path / "augmented.json").read_text())
    # chain(5) undelayed start value is gamma^3; the opening action is chosen with s_0 known
    assert report["initial_value"] == pytest.approx(0.95**3, abs=1e-10)
    assert report["augmented_states"] == 10


def test_cli_solve_augmented_from_document(tmp_path, capsys):
    from sedmdp.envs import dump_mdp, make_chain

    dump_mdp(make_chain(4, 0.0, 0.9), tmp_path / "c.json")
    assert main(["solve-augmented", "--env", str(tmp_path / "c.json"), "--M", "2", "--tol", "1e-12"]) == 0
    assert "0.8100000000" in capsys.readouterr().out


def test_cli_enumerate(tmp_path, capsys):
    from sedmdp.envs import dump_mdp
    from sedmdp.verification import micro_mdp

    dump_mdp(micro_mdp(), tmp_path / "m.json")
    (tmp_path / "e.json").write_text(json.dumps({"env": {"path": "m.json"}, "delay": "iid:[0.5,0.5]",
                                                 "default_queue": [1]}))
    assert main(["enumerate", "--config", str(tmp_path / "e.json"), "--horizon", "3", "--out", str(tmp_path / "o")]) == 0
    assert "total mass 1.000000000000000" in capsys.readouterr().out
    lines = (tmp_path / "o" / "histories.jsonl").read_text().splitlines()
    assert math.fsum(json.loads(x)["p"] for x in lines) == pytest.approx(1.0, abs=1e-12)


def test_cli_enumerate_rejects_walk_and_budget(tmp_path, capsys):
    (tmp_path / "w.json").write_text(json.dumps({"env": "chain", "delay": "walk:2"}))
    assert main(["enumerate", "--config", str(tmp_path / "w.json"), "--horizon", "2"]) == 2
    (tmp_path / "b.json").write_text(json.dumps({"env": "chain", "delay": "constant:1"}))
    assert main(["enumerate", "--config", str(tmp_path / "b.json"), "--horizon", "9", "--budget", "100"]) == 2
    assert "budget" in capsys.readouterr().err


def test_cli_run_with_global_flags(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(dict(BASE, episodes=2, seeds=[0, 1])))
    assert main(["--seed", "5", "--threads", "2", "run", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["config"]["master_seed"] == 5
    rows = list(csv.reader(io.StringIO((tmp_path / "o" / "results.csv").read_text())))
    assert len(rows) == 5
