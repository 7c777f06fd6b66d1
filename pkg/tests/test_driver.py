import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from e4lab.cmdp import Cmdp, TabularPolicy, epsilon_horizon, g_max, induce
from e4lab.driver import (CSV_COLUMNS, E4Config, attempt_bound, balanced_action, derive_safety_params,
                          escape_budget_upper, exit_probabilities, run, should_exploit, tightened_budget,
                          wandering_switch)
from e4lab.environments import SampleEnv, random_cmdp
from e4lab.errors import ConfigurationInfeasible, InvalidArgument


# ---------------------------------------------------------------------------
# safety parameters

def test_example_budget_fifteen():
    p = derive_safety_params(15.0, 0.9, 1.0, 1.0, "lemma9", T_k=20, T_u=14)
    expected = 0.9 ** 20 * 7.5 + 0.9 ** 14 / 0.1
    assert p.eps == pytest.approx(expected)
    assert p.eps == pytest.approx(3.1995, abs=1e-4)
    assert p.l == pytest.approx(15.0 - 2 * expected)
    assert p.l == pytest.approx(8.60099, abs=1e-4)
    assert p.d_prime == 7.5
    assert p.T_prime == 14


def test_lemma9_default_horizons_reach_fixed_point():
    p = derive_safety_params(3.0, 0.5, 1.0, 1.0, "lemma9")
    # T_u = T_k = 2: 0.25 * 1.5 + 0.25 / 0.5
    assert p.eps == pytest.approx(0.875)
    assert p.l == pytest.approx(1.25)
    assert p.T_u == 2 and p.T_k == 2
    assert epsilon_horizon(0.5, 1.0, 1.0, p.eps) == p.T_k


def test_algorithm1_formula():
    d, g = 200.0, 0.9
    expected = max(g * d / 2 + g ** 3 / (1 - g), d - d / (2 * g) + g / (1 - g))
    p = derive_safety_params(d, g, 1.0, 1.0, "algorithm1")
    assert p.eps == pytest.approx(expected)
    # d' = 100 exceeds the largest possible discounted cost 10, so no escape horizon applies
    assert p.T_prime is None


def test_fixed_mode_uses_given_slack():
    p = derive_safety_params(10.0, 0.99, 1.0, 1.0, "fixed", eps=1.0)
    assert p.eps == 1.0 and p.l == 8.0 and p.d_prime == 5.0
    assert p.T == epsilon_horizon(0.99, 1.0, 1.0, 1.0)
    with pytest.raises(InvalidArgument):
        derive_safety_params(10.0, 0.99, 1.0, 1.0, "fixed")


def test_infeasible_budget_reports_minimum():
    with pytest.raises(ConfigurationInfeasible) as info:
        derive_safety_params(2.1, 0.9, 1.0, 1.0, "algorithm1")
    need = info.value.minimal_budget
    assert math.isfinite(need) and need > 2.1
    p = derive_safety_params(need * (1 + 1e-6), 0.9, 1.0, 1.0, "algorithm1")
    assert p.l > 0


def test_budget_below_twice_cost_bound():
    with pytest.raises(ConfigurationInfeasible):
        derive_safety_params(2.0, 0.9, 1.0, 1.0, "fixed", eps=0.1)


def test_escape_budget_upper_admits_half_budget():
    assert escape_budget_upper(15.0, 3.2, 0.9, 20, 14, 1.0) >= 7.5
    # no slack and no known-state horizon leave the first branch negative
    g = 0.9
    first = 0.0 / g ** 0 - g ** 14 / (1 - g)
    assert first < 0


def test_tightened_budget_three_sigma():
    d_s, miss = tightened_budget(15.0, 0.9, 0.01)
    assert d_s == pytest.approx(12.0)
    assert miss == pytest.approx(0.1)
    with pytest.raises(ConfigurationInfeasible):
        tightened_budget(3.0, 0.9, 0.01)


def test_attempt_bound_reference():
    # ceil(10 (ln 1000 + 32))
    assert attempt_bound(100, 32, 1.0, 10.0, 0.1) == math.ceil(10 * (math.log(1000) + 32)) == 390
    with pytest.raises(InvalidArgument):
        attempt_bound(100, 32, 1.0, 10.0, 1.0)


# ---------------------------------------------------------------------------
# wandering and exploit test

def test_balanced_action_prefers_least_tried():
    counts = np.array([[3, 1, 2]])
    assert balanced_action(counts, 0) == 1
    assert balanced_action(np.zeros((1, 3), dtype=int), 0) == 0


@given(st.integers(1, 6), st.integers(0, 60))
def test_balanced_wandering_keeps_counts_level(A, visits):
    counts = np.zeros((1, A), dtype=int)
    for _ in range(visits):
        counts[0, balanced_action(counts, 0)] += 1
        assert counts.max() - counts.min() <= 1
    assert counts.sum() == visits


def test_wandering_switch_threshold():
    # threshold d' - c_max = 4
    assert not wandering_switch(2.0, 2, 0.9, 2.0, 5.0, 1.0)
    assert wandering_switch(2.0, 0, 0.9, 2.0, 5.0, 1.0)
    assert wandering_switch(4.0, 10, 0.9, 0.0, 5.0, 1.0)


def _leaky_loop(leak):
    kernel = np.array([[[1 - leak, leak]], [[0.0, 1.0]]])
    return Cmdp(kernel, np.zeros((2, 1)), np.zeros((2, 1)), 0.9, 3.0)


def test_exit_probability_chain():
    me = induce(_leaky_loop(0.05), [0], "explore")
    pi = TabularPolicy.uniform(2, 1)
    p = exit_probabilities(me, pi, 10)
    assert p[0] == pytest.approx(1 - 0.95 ** 10)
    assert p[0] == pytest.approx(0.40126, abs=1e-5)
    assert should_exploit(pi, me, eps=0.5, g_max_T=1.0, T=10, s=0)
    assert not should_exploit(pi, me, eps=0.4, g_max_T=1.0, T=10, s=0)


# ---------------------------------------------------------------------------
# main loop

def _small_run(seed=0, **kw):
    m = random_cmdp(6, 2, 0.9, 10.0, seed=3)
    cfg = E4Config(d=10.0, gamma=0.9, m_known=5, mode="fixed", eps=1.0, uncertainty="none",
                   initial_known=[0, 1], max_steps=5000, seed=seed, **kw)
    return m, cfg, run(SampleEnv(m, seed=seed), cfg)


def test_run_learns_the_small_model():
    m, cfg, log = _small_run()
    assert log.halt_reason == "converged"
    assert log.final_policy is not None
    assert len(log.final_known) == 6
    assert log.known_curve == sorted(log.known_curve)
    counts = [k for _, k in log.known_curve]
    assert counts == sorted(counts)


def test_run_log_rows_and_csv(tmp_path):
    _, cfg, log = _small_run()
    assert all(len(row) == len(CSV_COLUMNS) for row in log.steps)
    assert [row[0] for row in log.steps] == list(range(len(log.steps)))
    path = tmp_path / "run.csv"
    log.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == len(log.steps) + 1


def test_run_is_deterministic_per_seed():
    a = _small_run(seed=4)[2]
    b = _small_run(seed=4)[2]
    assert a.steps == b.steps


def test_run_respects_step_limit():
    m = random_cmdp(6, 2, 0.9, 10.0, seed=3)
    cfg = E4Config(d=10.0, gamma=0.9, m_known=50, mode="fixed", eps=1.0, uncertainty="none",
                   initial_known=[0], max_steps=100)
    log = run(SampleEnv(m), cfg)
    assert len(log.steps) <= 100
    assert log.halt_reason == "max_steps"


def test_config_rejects_unknown_choices():
    with pytest.raises(InvalidArgument):
        E4Config(solver="other")
    with pytest.raises(InvalidArgument):
        E4Config(uncertainty="other")
    with pytest.raises(ConfigurationInfeasible):
        E4Config(d=1.5)
