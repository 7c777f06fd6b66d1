import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import bandit
from e4lab.cmdp import TabularPolicy, evaluate_policy, induce
from e4lab.environments import random_cmdp
from e4lab.errors import InfeasibleError, InvalidArgument
from e4lab.oracle import exact_constrained_optimum
from e4lab.solvers import (SolverConfig, exact_lagrangian, lagrangian_dp, lagrangian_gradient_estimate,
                           occupation_lp, policy_gradient, robust_evaluate, robust_value_iteration)
from e4lab.uncertainty import L1Set, Singleton


def test_config_validation():
    with pytest.raises(InvalidArgument):
        SolverConfig(iterations=0)
    with pytest.raises(InvalidArgument):
        SolverConfig(lr_theta=0.0)
    with pytest.raises(InvalidArgument):
        SolverConfig(dual_signal="other")
    assert SolverConfig(iterations=100, lr_lambda=1.0).eta_lambda(10) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# linear program

def test_lp_bandit_mixes_actions():
    # always paying cost 1 costs 2 at gamma = 0.5, so half the mass fits a budget of 1
    res = occupation_lp(bandit(), 1.0)
    assert res.value == pytest.approx(1.0, abs=1e-8)
    assert res.cost == pytest.approx(1.0, abs=1e-8)
    assert np.allclose(res.policy().probs, [[0.5, 0.5]], atol=1e-8)


def test_lp_matches_grid_oracle_on_bandit():
    value, pi = exact_constrained_optimum(bandit(), 1.0, h=0.05)
    assert value == pytest.approx(1.0)
    assert np.allclose(pi.probs, [[0.5, 0.5]])


def test_lp_infeasible_reports_best_cost():
    with pytest.raises(InfeasibleError) as info:
        occupation_lp(bandit(cost=(1.0, 1.0)), 1.0)
    assert info.value.best_cost == pytest.approx(2.0, abs=1e-6)


@given(st.integers(0, 10_000))
def test_lp_dominates_every_feasible_deterministic_policy(seed):
    m = random_cmdp(3, 2, 0.8, 3.0, seed=seed)
    best, _ = exact_constrained_optimum(m, 3.0)
    try:
        res = occupation_lp(m, 3.0)
    except InfeasibleError:
        assert best == -np.inf
        return
    assert res.value >= best - 1e-7
    assert res.cost <= 3.0 + 1e-7
    v, c = evaluate_policy(m, res.policy())
    mu = np.full(3, 1 / 3)
    assert mu @ v == pytest.approx(res.value, abs=1e-6)
    assert mu @ c == pytest.approx(res.cost, abs=1e-6)


def test_lp_close_to_fine_policy_grid():
    m = random_cmdp(2, 2, 0.8, 2.0, seed=11)
    free = occupation_lp(m, 1e9)
    cmin = m.c_max / (1 - m.gamma) - occupation_lp(m.replace(reward=m.c_max - m.cost), 1e9).value
    budget = 0.5 * (cmin + free.cost)
    value, _ = exact_constrained_optimum(m, budget, h=0.02)
    res = occupation_lp(m, budget)
    assert value <= res.value + 1e-9
    assert res.value - value <= 0.05


def test_lp_on_induced_model():
    m = random_cmdp(5, 2, 0.9, 5.0, seed=4)
    mk = induce(m, [0, 1, 2], "exploit")
    res = occupation_lp(mk, 5.0, start=0)
    v, c = evaluate_policy(mk, res.policy())
    assert v[0] == pytest.approx(res.value, abs=1e-6)
    assert c[0] <= 5.0 + 1e-6


# ---------------------------------------------------------------------------
# dynamic programming

def test_dp_bandit_mixes_to_the_budget():
    res = lagrangian_dp(bandit(), None, 1.0)
    assert res.value == pytest.approx(1.0, abs=1e-6)
    assert res.cost <= 1.0 + 1e-6


def test_dp_unconstrained_when_budget_is_loose():
    res = lagrangian_dp(bandit(), None, 5.0)
    assert res.lam == 0.0
    assert res.value == pytest.approx(2.0)


def test_dp_infeasible():
    with pytest.raises(InfeasibleError):
        lagrangian_dp(bandit(cost=(1.0, 1.0)), None, 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_dp_agrees_with_lp(seed):
    m = random_cmdp(5, 3, 0.9, 4.0, seed=seed)
    free = occupation_lp(m, 1e9)
    cmin = m.c_max / (1 - m.gamma) - occupation_lp(m.replace(reward=m.c_max - m.cost), 1e9).value
    budget = 0.5 * (cmin + free.cost)
    lp = occupation_lp(m, budget)
    dp = lagrangian_dp(m, None, budget)
    assert dp.value == pytest.approx(lp.value, abs=1e-3)
    assert dp.cost <= budget + 1e-6


def test_robust_evaluate_with_singleton_is_nominal():
    m = random_cmdp(4, 2, 0.9, 5.0, seed=8)
    pi = TabularPolicy(np.random.default_rng(0).dirichlet(np.ones(2), size=4))
    v, c = robust_evaluate(m, Singleton(m.kernel), pi)
    v0, c0 = evaluate_policy(m, pi)
    assert np.allclose(v, v0, atol=1e-8)
    assert np.allclose(c, c0, atol=1e-8)


@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_robust_cost_monotone_in_radius(seed, r1, r2):
    m = random_cmdp(4, 2, 0.9, 5.0, seed=seed)
    pi = TabularPolicy(np.random.default_rng(seed).dirichlet(np.ones(2), size=4))
    lo, hi = sorted((r1, r2))
    _, c_lo = robust_evaluate(m, L1Set(m.kernel, lo), pi)
    _, c_hi = robust_evaluate(m, L1Set(m.kernel, hi), pi)
    _, c_nom = evaluate_policy(m, pi)
    assert np.all(c_nom <= c_lo + 1e-8)
    assert np.all(c_lo <= c_hi + 1e-8)


@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_robust_value_iteration_is_pessimistic(seed, radius):
    m = random_cmdp(4, 2, 0.9, 5.0, seed=seed)
    v_rob, _ = robust_value_iteration(m, L1Set(m.kernel, radius), 0.0)
    v_nom, _ = robust_value_iteration(m, None, 0.0)
    assert np.all(v_rob <= v_nom + 1e-8)


def test_robust_value_iteration_rejects_negative_multiplier():
    with pytest.raises(InvalidArgument):
        robust_value_iteration(bandit(), None, -1.0)


# ---------------------------------------------------------------------------
# policy gradient

def test_pg_bandit_reaches_the_mixed_optimum():
    cfg = SolverConfig(iterations=4000, horizon=20, lr_theta=1.0, lr_lambda=5.0, normalise=True, seed=0)
    res = policy_gradient(bandit(), None, 1.0, cfg)
    assert res.value == pytest.approx(1.0, abs=0.05)
    assert res.cost <= 1.0 + 0.05


def test_pg_is_reproducible():
    m = random_cmdp(3, 2, 0.8, 2.0, seed=1)
    cfg = SolverConfig(iterations=300, horizon=10, seed=5)
    a = policy_gradient(m, None, 2.0, cfg)
    b = policy_gradient(m, None, 2.0, cfg)
    assert np.array_equal(a.policy.probs, b.policy.probs)
    assert a.lam == b.lam


def test_gradient_estimate_vanishes_without_signal():
    m = random_cmdp(3, 2, 0.9, 5.0, seed=2).replace(reward=np.zeros((3, 2)), cost=np.zeros((3, 2)))
    g = lagrangian_gradient_estimate(m, np.zeros((3, 2)), 0.5, 10, 200, np.random.default_rng(0))
    assert np.allclose(g, 0.0)


def test_exact_lagrangian_at_zero_multiplier_is_value():
    m = random_cmdp(3, 2, 0.9, 5.0, seed=2)
    theta = np.zeros((3, 2))
    v, _ = evaluate_policy(m, TabularPolicy.from_logits(theta), 30)
    assert exact_lagrangian(m, theta, 0.0, 5.0, 30) == pytest.approx(v.mean())
