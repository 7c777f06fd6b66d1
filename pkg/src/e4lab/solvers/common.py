"""Shared solver configuration and helpers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidArgument


@dataclass(frozen=True)
class SolverConfig:
    """Settings shared by the three solvers.

    ``horizon=None`` means "solve the discounted problem to convergence".
    Learning rates follow ``lr(k) = lr0 / (1 + k / decay)`` with ``decay``
    defaulting to a tenth of the iteration count.
    """

    iterations: int = 2000
    horizon: Optional[int] = None
    lr_theta: float = 0.1
    lr_lambda: float = 0.01
    decay: Optional[float] = None
    tol: float = 1e-10
    seed: int = 0
    eps_dual: float = 1e-3
    bisect_iters: int = 60
    average_tail: float = 0.5
    baseline: bool = True
    dual_signal: str = "model"
    normalise: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgument("iterations must be at least 1")
        if self.lr_theta <= 0 or self.lr_lambda <= 0:
            raise InvalidArgument("learning rates must be positive")
        if self.dual_signal not in ("model", "sampled"):
            raise InvalidArgument(f"unknown dual signal {self.dual_signal!r}")
        if not 0.0 <= self.average_tail <= 1.0:
            raise InvalidArgument("average_tail must lie in [0, 1]")
        if self.horizon is not None and self.horizon < 1:
            raise InvalidArgument("horizon must be positive")

    @property
    def decay_steps(self) -> float:
        return self.decay if self.decay is not None else max(1.0, self.iterations / 10)

    def eta_theta(self, k: int) -> float:
        return self.lr_theta / (1.0 + k / self.decay_steps)

    def eta_lambda(self, k: int) -> float:
        return self.lr_lambda / (1.0 + k / self.decay_steps)


def uniform_start(m) -> np.ndarray:
    """Uniform distribution over the non-terminal states of ``m``."""
    mu = np.zeros(m.num_states)
    mu[m.interior] = 1.0 / len(m.interior)
    return mu


def start_vector(m, start) -> np.ndarray:
    if start is None:
        return uniform_start(m)
    if np.isscalar(start):
        mu = np.zeros(m.num_states)
        mu[int(start)] = 1.0
        return mu
    mu = np.asarray(start, dtype=float)
    if len(mu) == m.base_num_states and m.num_states == m.base_num_states + 1:
        mu = np.append(mu, 0.0)
    if mu.shape != (m.num_states,) or mu.min() < 0 or abs(mu.sum() - 1.0) > 1e-9:
        raise InvalidArgument("start must be a probability vector over states")
    return mu


def lagrangian_arrays(m, lam: float):
    """Unfolded per-step reward and terminal value of the Lagrangian problem."""
    if getattr(m, "variant", None) == "escape":
        return -np.asarray(m.interior_cost), -float(m.terminal_cost)
    reward = np.asarray(m.interior_reward) - lam * np.asarray(m.interior_cost)
    return reward, float(m.terminal_reward) - lam * float(m.terminal_cost)


def pad_policy(m, probs: np.ndarray) -> np.ndarray:
    """Extend base-state policy rows with a uniform terminal row when needed."""
    if probs.shape[0] == m.num_states:
        return probs
    extra = np.full((m.num_states - probs.shape[0], m.num_actions), 1.0 / m.num_actions)
    return np.vstack([probs, extra])
