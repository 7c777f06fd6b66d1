"""Occupation-measure linear program for nominal (non-robust) constrained problems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ..cmdp import TabularPolicy
from ..errors import InfeasibleError
from .common import start_vector


@dataclass
class OccupationMeasure:
    """Normalised discounted occupation ``f[s, a]`` with its value and cost from the start."""

    f: np.ndarray
    value: float
    cost: float

    def policy(self) -> TabularPolicy:
        mass = self.f.sum(axis=1, keepdims=True)
        A = self.f.shape[1]
        probs = np.where(mass > 1e-12, self.f / np.where(mass > 0, mass, 1.0), 1.0 / A)
        probs = np.clip(probs, 0.0, None)
        return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


def occupation_lp(m, budget: float, start=None) -> OccupationMeasure:
    """Maximise ``f @ r`` over discounted flows from ``start`` with ``f @ c <= (1 - gamma) budget``.

    Only non-terminal states carry variables.  Rewards and costs are the folded
    means of ``m`` so exits pay their terminal reward and cost.
    """
    mu = start_vector(m, start)
    g = m.gamma
    interior = m.interior
    n_s, A = len(interior), m.num_actions
    kernel = m.kernel[np.ix_(interior, np.arange(A), interior)]        # (n_s, A, n_s)
    reward = m.reward[interior].reshape(-1)
    cost = m.cost[interior].reshape(-1)
    keep = _undominated(m.kernel[interior], m.reward[interior], m.cost[interior]).reshape(-1)

    # column (i, a) contributes to the flow row of every successor state
    a_eq = np.zeros((n_s, n_s * A))
    for i in range(n_s):
        a_eq[i, i * A:(i + 1) * A] = 1.0
    a_eq -= g * kernel.reshape(n_s * A, n_s).T
    b_eq = (1 - g) * mu[interior]
    res = linprog(-reward[keep], A_ub=cost[None, keep], b_ub=[(1 - g) * budget],
                  A_eq=a_eq[:, keep], b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status == 2:
        raise InfeasibleError("no policy meets the budget", best_cost=_min_cost(m, mu), basis=None)
    if res.status != 0:
        raise RuntimeError(f"linear program failed: {res.message}")

    x = np.zeros(n_s * A)
    x[keep] = np.maximum(res.x, 0.0)
    f = np.zeros((m.num_states, A))
    f[interior] = x.reshape(n_s, A)
    return OccupationMeasure(f, float(reward @ x) / (1 - g), float(cost @ x) / (1 - g))


def _undominated(kernel: np.ndarray, reward: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Mask of actions not dominated by another action with the same next-state row.

    Such an action earns no more reward at no less cost, so dropping its column
    leaves the optimum unchanged and gives the solver a smaller problem.
    """
    n, A = reward.shape
    keep = np.ones((n, A), dtype=bool)
    for s in range(n):
        for a in range(A):
            for b in range(A):
                if b == a or not keep[s, b]:
                    continue
                if (np.array_equal(kernel[s, a], kernel[s, b]) and reward[s, b] >= reward[s, a]
                        and cost[s, b] <= cost[s, a]):
                    keep[s, a] = False
                    break
    return keep


def solve_occupation_lp(m, budget: float, start=None) -> TabularPolicy:
    return occupation_lp(m, budget, start).policy()


def _min_cost(m, mu: np.ndarray) -> float:
    """Smallest achievable expected discounted cost from ``mu`` (reported on infeasibility)."""
    c = np.zeros(m.num_states)
    for _ in range(100_000):
        new = (m.cost + m.gamma * m.kernel @ c).min(axis=1)
        if np.abs(new - c).max() < 1e-10:
            break
        c = new
    return float(mu @ c)
