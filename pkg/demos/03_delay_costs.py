"""What a delay costs on the branch gridworld, and how much of it planning
through the pending queue recovers.

The corridor has one exit upwards; every other upward cell is a pit and the
corridor ends in a pit.  An agent acting on the state it sees now, while
several of its older actions are still queued, walks past the exit.
"""
from sedmdp import ExperimentConfig, augmented_vi, make_branch_gridworld, run_experiment

mdp = make_branch_gridworld()
print("optimal start value with a constant delay (augmented-state value iteration):")
for m in range(4):
    sol = augmented_vi(mdp, m, tol=1e-10)
    print(f"  M = {m}: {sol.initial_value(mdp.mu):.4f} over {sol.n_augmented_states} augmented states")

for delay in ("constant:5", "walk:5,0.2"):
    config = ExperimentConfig.from_dict({
        "env": "branch", "delay": delay, "agents": ["delayed-mcts", "oblivious-mcts"],
        "episodes": 32, "seeds": list(range(20)), "forward_model": "exact", "max_steps": 60,
        "planner": {"n_simulations": 1, "rollout_depth": 20, "expansion": "expectimax"},
    })
    result = run_experiment(config, threads=4, write=False)
    summary = result.summary()["agents"]
    cmp = result.paired_difference("delayed-mcts", "oblivious-mcts")
    print(f"\n{delay}: mean score delayed {summary['delayed-mcts']['mean_return']:+.3f}, "
          f"oblivious {summary['oblivious-mcts']['mean_return']:+.3f}")
    print(f"  paired difference over {cmp.n} seeds: {cmp.mean:.3f}, 95% CI [{cmp.low:.3f}, {cmp.high:.3f}]")
