"""Visitation counts with the empirical model and known-state bookkeeping built on them."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .cmdp import Cmdp
from .errors import InvalidArgument


@dataclass
class KnowledgeBase:
    """Counts gathered from environment samples.

    A state is *known* once every action in it has been tried ``m_known`` times.
    """

    num_states: int
    num_actions: int
    m_known: int
    n: np.ndarray = None
    sum_r: np.ndarray = None
    sum_c: np.ndarray = None
    sum_r2: np.ndarray = None
    sum_c2: np.ndarray = None
    trans_count: np.ndarray = None

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise InvalidArgument("need at least one state and one action")
        if self.m_known < 1:
            raise InvalidArgument(f"m_known must be a positive integer, got {self.m_known}")
        S, A = self.num_states, self.num_actions
        if self.n is None:
            self.n = np.zeros((S, A), dtype=np.int64)
        for name in ("sum_r", "sum_c", "sum_r2", "sum_c2"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros((S, A)))
        if self.trans_count is None:
            self.trans_count = np.zeros((S, A, S), dtype=np.int64)
        if not np.array_equal(self.trans_count.sum(axis=2), self.n):
            raise InvalidArgument("transition counts disagree with visit counts")

    def _check(self, s: int, a: int, s_next: int = 0) -> None:
        if not (0 <= s < self.num_states and 0 <= s_next < self.num_states):
            raise InvalidArgument(f"state index out of range: {s}, {s_next}")
        if not 0 <= a < self.num_actions:
            raise InvalidArgument(f"action index out of range: {a}")

    def record(self, s: int, a: int, r: float, c: float, s_next: int) -> None:
        self._check(s, a, s_next)
        self.n[s, a] += 1
        self.sum_r[s, a] += r
        self.sum_c[s, a] += c
        self.sum_r2[s, a] += r * r
        self.sum_c2[s, a] += c * c
        self.trans_count[s, a, s_next] += 1

    def is_known(self, s: int) -> bool:
        return bool(self.n[s].min() >= self.m_known)

    def known_mask(self) -> np.ndarray:
        return self.n.min(axis=1) >= self.m_known

    def clone(self) -> "KnowledgeBase":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "m_known": self.m_known,
            "n": self.n.tolist(),
            "sum_r": self.sum_r.tolist(),
            "sum_c": self.sum_c.tolist(),
            "sum_r2": self.sum_r2.tolist(),
            "sum_c2": self.sum_c2.tolist(),
            "trans_count": self.trans_count.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeBase":
        return cls(
            int(data["num_states"]), int(data["num_actions"]), int(data["m_known"]),
            n=np.array(data["n"], dtype=np.int64),
            sum_r=np.array(data["sum_r"], dtype=float),
            sum_c=np.array(data["sum_c"], dtype=float),
            sum_r2=np.array(data.get("sum_r2", np.zeros_like(data["sum_r"])), dtype=float),
            sum_c2=np.array(data.get("sum_c2", np.zeros_like(data["sum_c"])), dtype=float),
            trans_count=np.array(data["trans_count"], dtype=np.int64),
        )


def known_partition(kb: KnowledgeBase) -> tuple:
    mask = kb.known_mask()
    return frozenset(np.flatnonzero(mask).tolist()), frozenset(np.flatnonzero(~mask).tolist())


def m_known_bound(S, T, G, eps, V, delta, kappa: float = 1.0) -> int:
    """Sample count after which a state's estimates are accurate enough to trust."""
    if not 0.0 < delta < 1.0:
        raise InvalidArgument(f"delta must lie in (0, 1), got {delta}")
    if min(S, T, G, eps, V, kappa) <= 0:
        raise InvalidArgument("all arguments must be positive")
    value = kappa * (S * T * G / eps) ** 4 * V * math.log(1.0 / delta)
    # guard against float noise pushing an exact integer over the ceiling
    nearest = round(value)
    if abs(value - nearest) <= 1e-9 * max(1.0, value):
        return max(1, int(nearest))
    return max(1, math.ceil(value))


def estimate_model(kb: KnowledgeBase, gamma: float, budget: float, r_max: float = 1.0,
                   c_max: float = 1.0) -> Cmdp:
    """Sample-mean model; unvisited pairs self-loop with zero reward and cost c_max."""
    S, A = kb.num_states, kb.num_actions
    n = kb.n.astype(float)
    seen = kb.n > 0
    safe_n = np.where(seen, n, 1.0)
    kernel = kb.trans_count / safe_n[:, :, None]
    s_idx, a_idx = np.nonzero(~seen)
    kernel[s_idx, a_idx, :] = 0.0
    kernel[s_idx, a_idx, s_idx] = 1.0
    reward = np.where(seen, kb.sum_r / safe_n, 0.0)
    cost = np.where(seen, kb.sum_c / safe_n, c_max)
    reward = np.clip(reward, 0.0, r_max)
    cost = np.clip(cost, 0.0, c_max)
    r_var = np.where(seen, np.maximum(kb.sum_r2 / safe_n - reward ** 2, 0.0), 0.0)
    c_var = np.where(seen, np.maximum(kb.sum_c2 / safe_n - cost ** 2, 0.0), 0.0)
    return Cmdp(kernel, reward, cost, gamma, budget, r_max=r_max, c_max=c_max,
                reward_var=r_var, cost_var=c_var)
