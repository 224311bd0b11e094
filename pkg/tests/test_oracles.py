import itertools
import math

import numpy as np
import pytest

from sedmdp.delays import ConstantDelay, IidDelay
from sedmdp.envs import make_branch_gridworld, make_chain, make_gridworld
from sedmdp.errors import BudgetExceededError, DomainError
from sedmdp.mdp import DeterministicPolicy, MarkovPolicy, MdpSpec, uniform_policy, value_iteration
from sedmdp.oracles import (
    EnumerationBudget,
    augmented_vi,
    best_markov_vs_best_history,
    enumerate_histories,
    finite_horizon_optimum,
    monte_carlo_marginal,
    total_mass,
)
from sedmdp.sed import SedConfig, enumerate_paths, process_marginal
from sedmdp.verification import micro_mdp


def explicit_augmented(mdp, m):
    """Augmented MDP built state by state as an ordinary MdpSpec."""
    n_s, n_a = mdp.n_states, mdp.n_actions
    queues = list(itertools.product(range(n_a), repeat=m))
    index = {(s, q): i for i, (s, q) in enumerate(itertools.product(range(n_s), queues))}
    P = np.zeros((len(index), n_a, len(index)))
    r = np.zeros((len(index), n_a))
    for (s, q), i in index.items():
        for a in range(n_a):
            r[i, a] = mdp.r[s, q[0]]
            for s2 in range(n_s):
                P[i, a, index[(s2, q[1:] + (a,))]] += mdp.P[s, q[0], s2]
    mu = np.zeros(len(index))
    mu[0] = 1.0
    return MdpSpec(P, r, mu, mdp.gamma), index


def test_augmented_hand_values_m1():
    sol = augmented_vi(make_chain(4, 0.0, 0.9), 1, tol=1e-14)
    assert sol.value(0, (0,)) == pytest.approx(0.9**3)   # wasted step, then 3 moves
    assert sol.value(1, (0,)) == pytest.approx(0.9**3)   # back to 0, then 3 moves
    assert sol.value(2, (1,)) == pytest.approx(1.0)
    assert sol.initial_value([1, 0, 0, 0]) == pytest.approx(0.81)


def test_augmented_hand_values_m2():
    sol = augmented_vi(make_chain(4, 0.0, 0.9), 2, tol=1e-14)
    assert sol.value(0, (0, 0)) == pytest.approx(0.9**4)
    assert sol.value(0, (1, 1)) == pytest.approx(0.81)
    assert sol.best_queue(0) == (1, 1)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_augmented_matches_explicit_construction(m):
    mdp = make_chain(4, 0.2, 0.9)
    sol = augmented_vi(mdp, m, tol=1e-13)
    aug, index = explicit_augmented(mdp, m)
    v, _ = value_iteration(aug, tol=1e-13)
    for (s, q), i in index.items():
        assert sol.value(s, q) == pytest.approx(v[i], abs=1e-10)


def test_augmented_m0_is_value_iteration():
    g = make_gridworld(4, 4, 0.1, goal=(3, 3))
    v, _ = value_iteration(g, tol=1e-12)
    sol = augmented_vi(g, 0, tol=1e-12)
    assert np.max(np.abs(sol.values[:, 0] - v)) <= 1e-9
    assert sol.n_augmented_states == 16


def test_augmented_encode_decode():
    sol = augmented_vi(make_gridworld(2, 2, 0.0, goal=(1, 1)), 3, tol=1e-6)
    for q in itertools.product(range(4), repeat=3):
        assert sol.decode(sol.encode(q)) == q
    assert sol.encode((1, 0, 0)) == 16


def test_augmented_budget_and_domain():
    with pytest.raises(BudgetExceededError):
        augmented_vi(make_branch_gridworld(), 8, max_states=10_000)
    with pytest.raises(DomainError):
        augmented_vi(make_chain(3), -1)


def test_augmented_value_nonincreasing_in_delay():
    mdp = make_branch_gridworld()
    values = [augmented_vi(mdp, m, tol=1e-10).initial_value(mdp.mu) for m in range(4)]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    assert values[0] > values[3]


def test_residuals_reach_tolerance():
    sol = augmented_vi(make_chain(5, 0.1), 2, tol=1e-8)
    assert sol.residuals[-1] <= 1e-8


def test_enumeration_budget():
    cfg = SedConfig(micro_mdp(), 2, IidDelay((0.3, 0.3, 0.4)), (0, 0))
    with pytest.raises(BudgetExceededError) as err:
        enumerate_histories(cfg, uniform_policy(2, 2), 6, EnumerationBudget(10_000, 6))
    assert err.value.count == (2 * 3) ** 6 * 2**5
    with pytest.raises(DomainError):
        EnumerationBudget(0)


def test_enumeration_mass():
    cfg = SedConfig(micro_mdp(), 2, IidDelay((0.3, 0.3, 0.4)), (0, 0))
    assert abs(total_mass(enumerate_histories(cfg, uniform_policy(2, 2), 4)) - 1.0) <= 1e-12


def test_enumeration_constant_delay_mass():
    cfg = SedConfig(micro_mdp(), 1, ConstantDelay(1), (1,))
    probs = enumerate_histories(cfg, uniform_policy(2, 2), 3)
    assert abs(total_mass(probs) - 1.0) <= 1e-12
    assert all(p == 0 for h, p in probs.items() if h.delays != (1, 1, 1))


def test_best_policies_without_delay_equal_dynamic_programming():
    mdp = micro_mdp()
    cfg = SedConfig(mdp, 0, ConstantDelay(0), ())
    md, hd = best_markov_vs_best_history(cfg, 3, (0, 0, 0))
    assert md == pytest.approx(finite_horizon_optimum(mdp, 3), abs=1e-12)
    assert hd == pytest.approx(md, abs=1e-12)


@pytest.mark.parametrize("z", list(itertools.product((0, 1), repeat=3)))
def test_best_markov_equals_best_history_at_horizon_three(z):
    cfg = SedConfig(micro_mdp(), 1, IidDelay((0.5, 0.5)), (0,))
    md, hd = best_markov_vs_best_history(cfg, 3, z)
    assert abs(hd - md) <= 1e-10


def test_history_dependence_pays_at_horizon_four():
    """Counterexample: with M=1 and z=(1,0,1,1) the best history-dependent
    deterministic policy beats every deterministic Markov policy."""
    cfg = SedConfig(micro_mdp(), 1, IidDelay((0.5, 0.5)), (0,))
    md, hd = best_markov_vs_best_history(cfg, 4, (1, 0, 1, 1))
    assert md == pytest.approx(2.4535536, abs=1e-9)
    assert hd == pytest.approx(2.4907326, abs=1e-9)


def test_best_markov_value_agrees_with_path_enumeration():
    """Brute-force over Markov tables through the generic path enumerator."""
    mdp = micro_mdp()
    cfg = SedConfig(mdp, 1, IidDelay((0.5, 0.5)), (0,))
    z = (1, 0, 1)
    best = -math.inf
    for table in itertools.product(range(2), repeat=6):
        rules = np.zeros((3, 2, 2))
        for k in range(3):
            for s in range(2):
                rules[k, s, table[2 * k + s]] = 1.0
        pol = MarkovPolicy(rules)
        total = 0.0
        for s0 in (0, 1):
            ret = math.fsum(w * sum(mdp.gamma**t * mdp.r[st[t], ac[t]] for t in range(3))
                            for st, ac, w in enumerate_paths(cfg, pol, s0, z, 2))
            total += mdp.mu[s0] * ret
        best = max(best, total)
    md, _ = best_markov_vs_best_history(cfg, 3, z)
    # per-start maxima can only match or beat one shared table
    assert md >= best - 1e-12


def test_best_policy_budget():
    cfg = SedConfig(micro_mdp(), 1, IidDelay((0.5, 0.5)), (0,))
    with pytest.raises(BudgetExceededError):
        best_markov_vs_best_history(cfg, 6, (0,) * 6, max_policies=1000)
    with pytest.raises(DomainError):
        best_markov_vs_best_history(cfg, 4, (0, 0))


def test_monte_carlo_marginal_converges(rng):
    cfg = SedConfig(micro_mdp(), 1, IidDelay((0.5, 0.5)), (0,))
    pol = uniform_policy(2, 2)
    z = (0, 1, 0)
    emp = monte_carlo_marginal(cfg, pol, 1, z, 2, 20000, rng)
    exact = process_marginal(cfg, pol, 1, z, 2)
    assert np.all(np.abs(emp.freq - exact) <= 4 * np.sqrt(exact * (1 - exact) / 20000) + 1e-12)
    assert emp.stderr_defined and emp.freq.sum() == pytest.approx(1.0)


def test_monte_carlo_single_sample_has_no_stderr(rng):
    cfg = SedConfig(micro_mdp(), 1, IidDelay((0.5, 0.5)), (0,))
    emp = monte_carlo_marginal(cfg, DeterministicPolicy([0, 1], 2), 0, (0, 0), 1, 1, rng, mechanistic=True)
    assert not emp.stderr_defined and np.all(np.isnan(emp.stderr))
    with pytest.raises(DomainError):
        monte_carlo_marginal(cfg, DeterministicPolicy([0, 1], 2), 0, (0, 0), 1, 0, rng)
