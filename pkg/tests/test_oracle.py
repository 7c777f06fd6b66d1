import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import bandit
from e4lab.cmdp import TabularPolicy, evaluate_policy
from e4lab.environments import random_cmdp
from e4lab.errors import InvalidArgument
from e4lab.oracle import PolicyGrid, enumerate_paths_eval, exact_constrained_optimum, exact_values, grid_inner_problem


def test_policy_grid_sizes():
    assert len(PolicyGrid(3, 2)) == 8
    assert len(PolicyGrid(1, 3, h=0.5)) == 6
    assert len(PolicyGrid(2, 2, h=0.25, states=(0,))) == 5
    with pytest.raises(InvalidArgument):
        PolicyGrid(1, 2, h=0.3)
    with pytest.raises(InvalidArgument):
        PolicyGrid(30, 2)


def test_policy_grid_rows_are_distributions():
    for pi in PolicyGrid(2, 3, h=0.5):
        assert np.allclose(pi.probs.sum(axis=1), 1.0)


def test_constrained_optimum_on_bandit():
    value, pi = exact_constrained_optimum(bandit(), 1.0, h=0.1)
    assert value == pytest.approx(1.0)
    assert np.allclose(pi.probs, [[0.5, 0.5]])
    assert exact_constrained_optimum(bandit(cost=(1.0, 1.0)), 1.0) == (-np.inf, None)


@given(st.integers(0, 10_000), st.integers(0, 4))
def test_path_enumeration_matches_backups(seed, T):
    m = random_cmdp(3, 2, 0.9, 5.0, density=0.7, seed=seed)
    pi = TabularPolicy(np.random.default_rng(seed).dirichlet(np.ones(2), size=3))
    v, c = evaluate_policy(m, pi, horizon=T)
    pv, pc = enumerate_paths_eval(m, pi, 1, T)
    assert pv == pytest.approx(v[1], abs=1e-12)
    assert pc == pytest.approx(c[1], abs=1e-12)


def test_path_enumeration_limit():
    with pytest.raises(InvalidArgument):
        enumerate_paths_eval(random_cmdp(10, 10, 0.9, 5.0), TabularPolicy.uniform(10, 10), 0, 4)


def test_exact_values_solve_agrees_with_backups():
    m = random_cmdp(4, 2, 0.5, 5.0, seed=0)
    pi = TabularPolicy.uniform(4, 2)
    v, _ = exact_values(m, pi)
    v200, _ = exact_values(m, pi, horizon=200)
    assert np.allclose(v, v200, atol=1e-12)


def test_grid_inner_problem_examples():
    v = np.array([0.0, 1.0, 2.0])
    assert grid_inner_problem([0.5, 0.5, 0.0], 0.2, v) == pytest.approx(0.7, abs=0.005 * 2)
    assert grid_inner_problem([0.5, 0.5, 0.0], 0.0, v) == pytest.approx(0.5)
    assert grid_inner_problem([0.5, 0.5], 2.0, [0.0, 2.0]) == pytest.approx(2.0)
