"""Brute-force references for tests, built on exhaustive enumeration.

Everything here trades speed for transparency and only suits tiny instances.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .cmdp import TabularPolicy
from .errors import InvalidArgument

MAX_POLICIES = 1_000_000
MAX_PATHS = 1_000_000
MAX_GRID_POINTS = 2_000_000


def _compositions(total: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]])
    rows = []
    for first in range(total, -1, -1):
        rest = _compositions(total - first, parts - 1)
        rows.append(np.column_stack([np.full(len(rest), first), rest]))
    return np.vstack(rows)


@dataclass
class PolicyGrid:
    """Enumerates deterministic policies (``h=None``) or all policies whose rows lie on an ``h``-grid.

    Only the states in ``states`` vary; every other row is uniform.
    """

    num_states: int
    num_actions: int
    h: Optional[float] = None
    states: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.states is None:
            self.states = tuple(range(self.num_states))
        if self.h is not None:
            steps = round(1.0 / self.h)
            if self.h <= 0 or abs(steps * self.h - 1.0) > 1e-9:
                raise InvalidArgument(f"grid step must divide 1, got {self.h}")
        if len(self) > MAX_POLICIES:
            raise InvalidArgument(f"{len(self)} policies exceed the enumeration limit {MAX_POLICIES}")

    def rows(self) -> np.ndarray:
        """Candidate action distributions for one state."""
        A = self.num_actions
        if self.h is None:
            return np.eye(A)
        steps = round(1.0 / self.h)
        return _compositions(steps, A) / steps

    def __len__(self) -> int:
        return len(self.rows()) ** len(self.states)

    def __iter__(self) -> Iterator[TabularPolicy]:
        rows = self.rows()
        base = np.full((self.num_states, self.num_actions), 1.0 / self.num_actions)
        for choice in itertools.product(range(len(rows)), repeat=len(self.states)):
            probs = base.copy()
            probs[list(self.states)] = rows[list(choice)]
            yield TabularPolicy(probs)


def exact_values(m, pi: TabularPolicy, horizon: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Value and cost of ``pi`` by a direct linear solve (``horizon=None``) or ``horizon`` backups."""
    probs = pi.probs
    if probs.shape[0] != m.num_states:
        probs = np.vstack([probs, np.full((m.num_states - probs.shape[0], m.num_actions), 1.0 / m.num_actions)])
    p_pi = np.einsum("sa,sat->st", probs, m.kernel)
    r_pi = (probs * m.reward).sum(axis=1)
    c_pi = (probs * m.cost).sum(axis=1)
    g = m.gamma
    if horizon is None:
        lhs = np.eye(m.num_states) - g * p_pi
        return np.linalg.solve(lhs, r_pi), np.linalg.solve(lhs, c_pi)
    v = np.zeros(m.num_states)
    c = np.zeros(m.num_states)
    for _ in range(int(horizon)):
        v, c = r_pi + g * p_pi @ v, c_pi + g * p_pi @ c
    return v, c


def _start(m, start) -> np.ndarray:
    mu = np.zeros(m.num_states)
    if start is None:
        mu[m.interior] = 1.0 / len(m.interior)
    elif np.isscalar(start):
        mu[int(start)] = 1.0
    else:
        mu[:len(start)] = start
    return mu


def exact_constrained_optimum(m, d: float, horizon: Optional[int] = None, start=None,
                              h: Optional[float] = None, tol: float = 1e-9):
    """Best value over a policy grid subject to ``cost <= d`` from ``start``.

    Deterministic policies are enumerated when ``h`` is None; otherwise every
    row runs over the ``h``-grid.  Returns ``(value, policy)``, or
    ``(-inf, None)`` when no enumerated policy is feasible.
    """
    mu = _start(m, start)
    grid = PolicyGrid(m.num_states, m.num_actions, h, tuple(int(s) for s in m.interior))
    best_value, best_policy = -math.inf, None
    for pi in grid:
        v, c = exact_values(m, pi, horizon)
        value, cost = float(mu @ v), float(mu @ c)
        if cost <= d + tol and value > best_value + 1e-12:
            best_value, best_policy = value, pi
    return best_value, best_policy


def enumerate_paths_eval(m, pi: TabularPolicy, s: int, T: int) -> Tuple[float, float]:
    """Expected T-step discounted value and cost from ``s`` as a sum over every path."""
    if T < 0:
        raise InvalidArgument("horizon must be non-negative")
    S, A = m.num_states, m.num_actions
    if float(S * A) ** T > MAX_PATHS:
        raise InvalidArgument(f"(S*A)^T = {float(S * A) ** T:.3g} paths exceed the limit {MAX_PATHS}")
    probs = pi.probs
    if probs.shape[0] != S:
        probs = np.vstack([probs, np.full((S - probs.shape[0], A), 1.0 / A)])
    g = m.gamma
    value = 0.0
    cost = 0.0
    # each frontier entry: (state, path probability, discount)
    frontier = [(int(s), 1.0, 1.0)]
    for _ in range(T):
        nxt = []
        for state, prob, disc in frontier:
            for a in range(A):
                pa = prob * probs[state, a]
                if pa == 0.0:
                    continue
                value += pa * disc * m.reward[state, a]
                cost += pa * disc * m.cost[state, a]
                for s_next in np.flatnonzero(m.kernel[state, a]):
                    nxt.append((int(s_next), pa * m.kernel[state, a, s_next], disc * g))
        frontier = nxt
    return float(value), float(cost)


def grid_inner_problem(nominal: np.ndarray, psi: float, v: np.ndarray, h: float = 0.005) -> float:
    """max of ``p @ v`` over the ``h``-grid of the simplex within L1 distance ``psi`` of ``nominal``.

    The nominal row itself is always a candidate, so ``psi = 0`` is exact.
    """
    nominal = np.asarray(nominal, dtype=float)
    v = np.asarray(v, dtype=float)
    steps = round(1.0 / h)
    n = len(nominal)
    if math.comb(steps + n - 1, n - 1) > MAX_GRID_POINTS:
        raise InvalidArgument("grid too fine for this many states")
    points = _compositions(steps, n) / steps
    inside = np.abs(points - nominal).sum(axis=1) <= psi + 1e-12
    best = float(nominal @ v)
    if inside.any():
        best = max(best, float((points[inside] @ v).max()))
    return best
