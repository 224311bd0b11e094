"""Tabular toolkit for MDPs with stochastic execution delays."""
from .delays import (
    ConstantDelay,
    IidDelay,
    QueueState,
    RandomWalkDelay,
    decision_times,
    earliest_execution_time,
    effective_decision_time,
    resolve_pending_queue,
    switch_time,
)
from .envs import load_mdp, make_bandit, make_branch_gridworld, make_chain, make_gridworld
from .errors import BudgetExceededError, ConfigError, DomainError, QueueConsistencyError, ValidationError
from .harness import ExperimentConfig, run_experiment
from .mdp import DeterministicPolicy, History, HistoryPolicy, MarkovPolicy, MdpSpec, value_iteration
from .oracles import (
    augmented_vi,
    best_markov_vs_best_history,
    enumerate_histories,
    monte_carlo_marginal,
)
from .planning import MctsConfig, bootstrap_initial_queue, mcts_plan, postprocess_episode, predict_future_state
from .sed import (
    SedConfig,
    SedEnv,
    env_reset,
    env_step,
    markov_reduction,
    process_marginal,
    trajectory_probability,
)

__version__ = "0.1.0"
