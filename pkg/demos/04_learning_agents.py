"""All four agents learning online on a slippery chain with random delays.

Model-based agents fit a tabular forward model from post-processed
transitions; the Q agents learn values directly.  Oblivious agents store
transitions under the action they decided, which under delay is often not
the one that ran.  Results land in demos/out/chain_smoke.
"""
from pathlib import Path

from sedmdp import ExperimentConfig, run_experiment

here = Path(__file__).parent
config = ExperimentConfig.load(here / "configs" / "chain_smoke.json")
config.out = str(here / "out" / "chain_smoke")
result = run_experiment(config, threads=2)

for agent, stats in result.summary()["agents"].items():
    returns = result.returns(agent)
    last = [r for per_seed in returns.values() for r in per_seed[-5:]]
    print(f"{agent:15s} success rate overall {stats['mean_return']:.2f}, "
          f"last five episodes {sum(last) / len(last):.2f}, interactions {stats['interactions']}")
print(f"\nresults.csv, per-step logs and summary.json written to {config.out}")
