import numpy as np
import pytest
from scipy.optimize import linprog
from hypothesis import given
from hypothesis import strategies as st

from e4lab.errors import InvalidArgument
from e4lab.oracle import grid_inner_problem
from e4lab.uncertainty import (CredibleSet, L1Set, ModelSet, Singleton, credible_budget, filter_models,
                               hoeffding_budget)


def test_hoeffding_reference_value():
    # sqrt(2/8 * (ln(6 / 0.9) + 3 ln 2))
    expected = np.sqrt(0.25 * (np.log(6 / 0.9) + 3 * np.log(2)))
    assert hoeffding_budget(8, 3, 2, 0.1) == pytest.approx(expected, abs=1e-12)
    assert hoeffding_budget(8, 3, 2, 0.1) == pytest.approx(0.99707, abs=1e-5)


def test_hoeffding_conventional_divides_by_delta():
    expected = np.sqrt(2 / 50 * (np.log(6 / 0.1) + 3 * np.log(2)))
    assert hoeffding_budget(50, 3, 2, 0.1, "conventional") == pytest.approx(expected)


def test_hoeffding_edge_cases():
    assert hoeffding_budget(0, 3, 2, 0.1) == 2.0
    assert hoeffding_budget(1, 3, 2, 0.1) == 2.0
    with pytest.raises(InvalidArgument):
        hoeffding_budget(5, 3, 2, 1.0)
    with pytest.raises(InvalidArgument):
        hoeffding_budget(5, 3, 2, 0.1, "other")


@given(st.integers(1, 10_000), st.integers(1, 10), st.integers(1, 5), st.floats(0.01, 0.99))
def test_hoeffding_decreases_with_visits(n, S, A, delta):
    assert hoeffding_budget(n + 1, S, A, delta) <= hoeffding_budget(n, S, A, delta)
    assert 0.0 <= hoeffding_budget(n, S, A, delta) <= 2.0


def test_credible_budget_uniform_posterior_median():
    # p ~ U(0,1): the L1 distance to (1/2, 1/2) is 2|p - 1/2| ~ U(0,1), median 1/2
    value = credible_budget([1.0, 1.0], 0.5, n_samples=20_000, rng=np.random.default_rng(0))
    assert value == pytest.approx(0.5, abs=0.05)


def test_credible_budget_shrinks_with_counts():
    rng = np.random.default_rng(1)
    wide = credible_budget([1.0, 1.0, 1.0], 0.1, rng=rng)
    narrow = credible_budget([100.0, 100.0, 100.0], 0.1, rng=rng)
    assert narrow < wide


def test_credible_budget_argument_checks():
    with pytest.raises(InvalidArgument):
        credible_budget([1.0, 0.0], 0.1)
    with pytest.raises(InvalidArgument):
        credible_budget([1.0, 1.0], 0.1, n_samples=10)


def test_credible_set_from_counts_uses_prior():
    counts = np.zeros((2, 1, 2))
    counts[0, 0] = [4, 0]
    cs = CredibleSet.from_counts(counts, 0.1)
    assert np.allclose(cs.center[0, 0], [4.1 / 4.2, 0.1 / 4.2])
    assert np.allclose(cs.center[1, 0], [0.5, 0.5])
    assert cs.radius[0, 0] < cs.radius[1, 0]


def test_l1_worst_row_example():
    center = np.array([[[0.5, 0.5, 0.0]]])
    s = L1Set(center, 0.2)
    v = np.array([0.0, 1.0, 2.0])
    value, row = s.worst_case_expectation(0, 0, v)
    assert value == pytest.approx(0.7)
    assert np.allclose(row, [0.4, 0.5, 0.1])
    assert value == pytest.approx(grid_inner_problem(center[0, 0], 0.2, v), abs=0.005 * 2 + 1e-9)


def test_l1_radius_two_reaches_vertex():
    s = L1Set(np.array([[[0.2, 0.3, 0.5]]]), 2.0)
    assert np.allclose(s.worst_case_row(0, 0, np.array([0.0, 2.0, 1.0])), [0, 1, 0])


def test_l1_negative_radius_rejected():
    with pytest.raises(InvalidArgument):
        L1Set(np.ones((1, 1, 1)), -0.1)


rows = st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n),
    st.lists(st.floats(-3.0, 3.0), min_size=n, max_size=n)))


@given(rows, st.floats(0.0, 2.0))
def test_l1_worst_row_is_member_and_dominates_nominal(data, radius):
    weights, v = data
    nominal = np.array(weights) / sum(weights)
    v = np.array(v)
    s = L1Set(nominal[None, None], radius)
    row = s.worst_case_row(0, 0, v)
    assert s.contains(0, 0, row, tol=1e-9)
    assert row @ v >= nominal @ v - 1e-12


@given(rows, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_l1_worst_value_monotone_in_radius(data, r1, r2):
    weights, v = data
    nominal = np.array(weights) / sum(weights)
    v = np.array(v)
    lo, hi = sorted((r1, r2))
    a = L1Set(nominal[None, None], lo).worst_case_values(v)[0, 0]
    b = L1Set(nominal[None, None], hi).worst_case_values(v)[0, 0]
    assert a <= b + 1e-12


@given(st.integers(0, 10_000))
def test_l1_closed_form_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    nominal = rng.dirichlet(np.ones(3))
    v = rng.uniform(0, 1, size=3)
    radius = rng.uniform(0, 2)
    closed = L1Set(nominal[None, None], radius).worst_case_values(v)[0, 0]
    grid = grid_inner_problem(nominal, radius, v, h=0.01)
    # the grid is a subset of the feasible region, so it can only fall short
    assert grid <= closed + 1e-9
    assert closed - grid <= 0.02 * (v.max() - v.min()) + 1e-9


def _l1_lp(nominal, radius, v):
    # p = nominal + up - down with up, down >= 0, sum(up + down) <= radius, p >= 0, sum(p) = 1
    n = len(nominal)
    a_ub = np.vstack([np.ones(2 * n), np.hstack([-np.eye(n), np.eye(n)])])
    b_ub = np.concatenate([[radius], nominal])
    a_eq = np.concatenate([np.ones(n), -np.ones(n)])[None]
    res = linprog(np.concatenate([-v, v]), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[0.0], bounds=(0, None))
    return nominal @ v - res.fun


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_l1_closed_form_matches_linear_program(seed, n):
    rng = np.random.default_rng(seed)
    nominal = rng.dirichlet(np.ones(n))
    v = rng.normal(size=n)
    radius = float(rng.uniform(0, 2))
    closed = L1Set(nominal[None, None], radius).worst_case_values(v)[0, 0]
    assert closed == pytest.approx(_l1_lp(nominal, radius, v), abs=1e-8)


def test_singleton_returns_its_kernel():
    k = np.array([[[0.25, 0.75]], [[1.0, 0.0]]])
    s = Singleton(k)
    assert np.array_equal(s.worst_case_kernel(np.array([5.0, -1.0])), k)
    assert s.contains(0, 0, [0.25, 0.75])
    assert not s.contains(0, 0, [0.5, 0.5])


def _cycle_models(tau_max=0.1):
    # model 0 advances around a 3-cycle; model 1 stays put
    S = 3
    nxt = np.zeros((2, S, 1), dtype=int)
    nxt[0, :, 0] = [1, 2, 0]
    nxt[1, :, 0] = [0, 1, 2]
    return ModelSet(nxt, np.ones((S, S), dtype=bool), tau_max)


def test_model_set_kernel_shape_and_mass():
    ms = _cycle_models()
    k = ms.kernel(0, 0.1)
    assert np.allclose(k[0, 0], [0.1 / 3, 0.9 + 0.1 / 3, 0.1 / 3])
    assert np.allclose(k.sum(axis=2), 1.0)


def test_model_set_worst_case_picks_best_member():
    ms = _cycle_models()
    v = np.array([0.0, 10.0, 0.0])
    row = ms.worst_case_row(0, 0, v)
    assert ms.contains(0, 0, row)
    assert row @ v == pytest.approx(10.0)
    assert np.allclose(ms.worst_case_kernel(v)[0, 0], row)
    # no model's typical outcome reaches state 2, so the error mass is the best choice
    far = np.array([0.0, 0.0, 10.0])
    assert ms.worst_case_row(0, 0, far) @ far == pytest.approx(10 * 0.1 / 3)


@given(st.integers(0, 10_000))
def test_model_set_worst_case_dominates_every_member(seed):
    ms = _cycle_models()
    v = np.random.default_rng(seed).normal(size=3)
    best = ms.worst_case_values(v)
    for i in range(ms.num_models):
        for tau in (0.0, 0.05, 0.1):
            assert np.all(ms.kernel(i, tau) @ v <= best + 1e-12)


def test_filter_models_drops_inconsistent_model():
    ms = _cycle_models()
    path = [(0, 0, 1), (1, 0, 2), (2, 0, 0)]
    assert filter_models(ms, path).active_models() == [0]
    assert filter_models(ms, [(0, 0, 0), (0, 0, 0), (0, 0, 0)]).active_models() == [1]


def test_filter_models_never_empties():
    ms = _cycle_models(tau_max=0.0)
    # with no error mass neither model can move 0 -> 2
    assert filter_models(ms, [(0, 0, 2)]).active_models() == [0, 1]
    assert filter_models(ms, []).active_models() == [0, 1]


def test_filter_models_applies_transfer_rules():
    ms = _cycle_models()
    ms.transfer[(0, 0)] = [1]
    assert filter_models(ms, [(0, 0, 1)]).active_models() == [1]
