"""Tabular constrained MDPs with their policies and exact evaluation.

Array conventions used throughout the package:

    kernel[s, a, s']   transition probabilities, shape (S, A, S)
    reward[s, a]       mean reward
    cost[s, a]         mean constraint-cost

An :class:`InducedCmdp` keeps the base state indices and appends one extra
terminal index ``S``.  Its ``kernel``/``reward``/``cost`` arrays have the
terminal reward and cost folded into the exiting transitions, so every
evaluation routine can treat it as an ordinary CMDP with an absorbing,
zero-reward terminal state.  Robust routines instead use the unfolded
``interior_reward``/``interior_cost`` together with :meth:`InducedCmdp.lift`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidArgument

ROW_TOL = 1e-12

EXPLOIT = "exploit"
EXPLORE = "explore"
ESCAPE = "escape"
VARIANTS = (EXPLOIT, EXPLORE, ESCAPE)


def epsilon_horizon(gamma: float, r_max: float, c_max: float, eps: float) -> int:
    """Smallest integer horizon T with (1/(1-gamma)) ln(max(r_max, c_max) / (eps (1-gamma))) <= T.

    Clamped below at 1.
    """
    if not 0.0 <= gamma < 1.0:
        raise InvalidArgument(f"discount must lie in [0, 1), got {gamma}")
    if eps <= 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    g = max(r_max, c_max)
    if g <= 0:
        raise InvalidArgument("max(r_max, c_max) must be positive")
    t = math.log(g / (eps * (1.0 - gamma))) / (1.0 - gamma)
    return max(1, math.ceil(t))


def g_max(bound: float, gamma: float, horizon: Optional[int] = None) -> float:
    """Largest T-step discounted sum of per-step values bounded by ``bound``."""
    if horizon is None:
        return bound / (1.0 - gamma)
    return bound * (1.0 - gamma ** horizon) / (1.0 - gamma)


def escape_horizon(gamma: float, c_max: float, budget: float) -> int:
    """inf{T : sum_{t<T} gamma^t c_max >= budget}, clamped below at 1."""
    if c_max <= 0:
        raise InvalidArgument("c_max must be positive")
    if budget >= c_max / (1.0 - gamma):
        raise InvalidArgument(f"budget {budget} is never reached at c_max={c_max}, gamma={gamma}")
    if budget <= 0:
        return 1
    if gamma == 0.0:
        return 1 if budget <= c_max else 2
    # closed form of the partial geometric sum, then nudge past rounding at the boundary
    gap = 1.0 - budget * (1.0 - gamma) / c_max
    if gap <= 1e-14:
        raise InvalidArgument(f"budget {budget} is never reached at c_max={c_max}, gamma={gamma}")
    t = max(1, math.ceil(math.log(gap) / math.log(gamma) - 1e-9))
    partial = lambda n: c_max * (1.0 - gamma ** n) / (1.0 - gamma)
    while t > 1 and partial(t - 1) >= budget:
        t -= 1
    while partial(t) < budget * (1 - 1e-12):
        t += 1
    return t


def _check_kernel(kernel: np.ndarray) -> None:
    if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
        raise InvalidArgument(f"kernel must have shape (S, A, S), got {kernel.shape}")
    neg = np.argwhere(kernel < 0)
    if len(neg):
        s, a, t = neg[0]
        raise InvalidArgument(f"negative probability at (s={s}, a={a}, s'={t})")
    sums = kernel.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL * max(1, kernel.shape[2]))
    if len(bad):
        s, a = bad[0]
        raise InvalidArgument(f"kernel row (s={s}, a={a}) sums to {sums[s, a]!r}")


@dataclass(frozen=True, eq=False)
class Cmdp:
    """A tabular CMDP with mean rewards/costs and per-pair noise variances."""

    kernel: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    gamma: float
    budget: float
    r_max: float = 1.0
    c_max: float = 1.0
    reward_var: Optional[np.ndarray] = None
    cost_var: Optional[np.ndarray] = None
    noise: str = "deterministic"

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=float)
        S, A, _ = kernel.shape if kernel.ndim == 3 else (None, None, None)
        _check_kernel(kernel)
        reward = np.asarray(self.reward, dtype=float)
        cost = np.asarray(self.cost, dtype=float)
        if reward.shape != (S, A) or cost.shape != (S, A):
            raise InvalidArgument(f"reward/cost must have shape {(S, A)}")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidArgument(f"discount must lie in [0, 1), got {self.gamma}")
        if reward.min() < 0 or reward.max() > self.r_max + 1e-12:
            raise InvalidArgument("rewards must lie in [0, r_max]")
        if cost.min() < 0 or cost.max() > self.c_max + 1e-12:
            raise InvalidArgument("costs must lie in [0, c_max]")
        if self.noise not in ("deterministic", "gaussian"):
            raise InvalidArgument(f"unknown noise family {self.noise!r}")
        rv = np.zeros((S, A)) if self.reward_var is None else np.asarray(self.reward_var, dtype=float)
        cv = np.zeros((S, A)) if self.cost_var is None else np.asarray(self.cost_var, dtype=float)
        if rv.shape != (S, A) or cv.shape != (S, A) or rv.min() < 0 or cv.min() < 0:
            raise InvalidArgument("noise variances must be non-negative (S, A) arrays")
        for name, arr in (("kernel", kernel), ("reward", reward), ("cost", cost),
                          ("reward_var", rv), ("cost_var", cv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def num_actions(self) -> int:
        return self.kernel.shape[1]

    @property
    def base_num_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return np.arange(self.num_states)

    @property
    def terminal(self) -> Optional[int]:
        return None

    @property
    def var_max(self) -> float:
        return float(self.reward_var.max())

    @property
    def var_max_c(self) -> float:
        return float(self.cost_var.max())

    # robust routines work on the base kernel with these unfolded arrays
    @property
    def interior_reward(self) -> np.ndarray:
        return self.reward

    @property
    def interior_cost(self) -> np.ndarray:
        return self.cost

    terminal_reward = 0.0
    terminal_cost = 0.0

    def lift(self, values: np.ndarray, terminal_value: float = 0.0) -> np.ndarray:
        return np.asarray(values, dtype=float)

    def replace(self, **changes) -> "Cmdp":
        fields = dict(kernel=self.kernel, reward=self.reward, cost=self.cost, gamma=self.gamma,
                      budget=self.budget, r_max=self.r_max, c_max=self.c_max,
                      reward_var=self.reward_var, cost_var=self.cost_var, noise=self.noise)
        fields.update(changes)
        return Cmdp(**fields)

    def satisfies_budget_assumption(self) -> bool:
        return self.budget > 2 * self.c_max


@dataclass(frozen=True, eq=False)
class InducedCmdp:
    """A CMDP restricted to ``subset``; exits are redirected to terminal index ``S``."""

    base: Cmdp
    subset: frozenset
    variant: str
    budget: float
    terminal_reward: float = 0.0
    terminal_cost: float = 0.0
    reward_override: Optional[float] = None
    cost_override: Optional[float] = None
    _arrays: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        S, A = self.base.num_states, self.base.num_actions
        mask = np.zeros(S, dtype=bool)
        mask[list(self.subset)] = True
        r_int = self.base.reward.copy() if self.reward_override is None else np.full((S, A), float(self.reward_override))
        c_int = self.base.cost.copy() if self.cost_override is None else np.full((S, A), float(self.cost_override))
        r_int[~mask] = 0.0
        c_int[~mask] = 0.0

        N = S + 1
        kernel = np.zeros((N, A, N))
        inside = self.base.kernel * mask[None, None, :]
        kernel[:S, :, :S] = inside
        exit_mass = np.clip(1.0 - inside.sum(axis=2), 0.0, 1.0)
        kernel[:S, :, S] = exit_mass
        kernel[~np.append(mask, True)] = 0.0
        kernel[np.flatnonzero(~mask), :, S] = 1.0
        kernel[S, :, S] = 1.0

        g = self.base.gamma
        reward = np.zeros((N, A))
        cost = np.zeros((N, A))
        reward[:S] = r_int + g * exit_mass * self.terminal_reward * mask[:, None]
        cost[:S] = c_int + g * exit_mass * self.terminal_cost * mask[:, None]

        for name, arr in (("mask", mask), ("kernel", kernel), ("reward", reward), ("cost", cost),
                          ("interior_reward", r_int), ("interior_cost", c_int),
                          ("exit_mass", exit_mass)):
            arr.setflags(write=False)
            self._arrays[name] = arr

    @property
    def mask(self) -> np.ndarray:
        return self._arrays["mask"]

    @property
    def kernel(self) -> np.ndarray:
        return self._arrays["kernel"]

    @property
    def reward(self) -> np.ndarray:
        return self._arrays["reward"]

    @property
    def cost(self) -> np.ndarray:
        return self._arrays["cost"]

    @property
    def interior_reward(self) -> np.ndarray:
        return self._arrays["interior_reward"]

    @property
    def interior_cost(self) -> np.ndarray:
        return self._arrays["interior_cost"]

    @property
    def exit_mass(self) -> np.ndarray:
        return self._arrays["exit_mass"]

    @property
    def gamma(self) -> float:
        return self.base.gamma

    @property
    def r_max(self) -> float:
        return self.base.r_max

    @property
    def c_max(self) -> float:
        return self.base.c_max

    @property
    def num_states(self) -> int:
        return self.base.num_states + 1

    @property
    def num_actions(self) -> int:
        return self.base.num_actions

    @property
    def base_num_states(self) -> int:
        return self.base.num_states

    @property
    def terminal(self) -> int:
        return self.base.num_states

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def lift(self, values: np.ndarray, terminal_value: float = 0.0) -> np.ndarray:
        """Map a value vector over this CMDP's states onto base states.

        States outside the subset take ``terminal_value``: reaching them ends the
        episode with the terminal reward/cost.
        """
        w = np.array(values[: self.base_num_states], dtype=float)
        w[~self.mask] = terminal_value
        return w


def induce(m: Cmdp, subset: Iterable[int], variant: str = EXPLOIT, budget: Optional[float] = None) -> InducedCmdp:
    """Build the exploitation, exploration or worst-case escape CMDP over ``subset``."""
    subset = frozenset(int(s) for s in subset)
    if not subset:
        raise InvalidArgument("subset must be non-empty")
    if min(subset) < 0 or max(subset) >= m.num_states:
        raise InvalidArgument("subset contains out-of-range states")
    if variant not in VARIANTS:
        raise InvalidArgument(f"unknown variant {variant!r}")
    budget = m.budget if budget is None else float(budget)
    if variant == EXPLOIT:
        return InducedCmdp(m, subset, variant, budget)
    if variant == EXPLORE:
        return InducedCmdp(m, subset, variant, budget, terminal_reward=m.r_max, reward_override=0.0)
    return InducedCmdp(m, subset, variant, budget, cost_override=m.c_max)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Stochastic policy ``probs[s, a]``, optionally backed by softmax logits."""

    probs: np.ndarray
    logits: Optional[np.ndarray] = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2:
            raise InvalidArgument("policy probabilities must be a 2-d array")
        if probs.min() < 0 or np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_TOL * probs.shape[1]):
            raise InvalidArgument("policy rows must be probability vectors")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if self.logits is not None:
            logits = np.array(self.logits, dtype=float)
            logits.setflags(write=False)
            object.__setattr__(self, "logits", logits)

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "TabularPolicy":
        return cls(softmax(logits), logits)

    @classmethod
    def deterministic(cls, actions: Sequence[int], num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), num_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    def act(self, s: int, rng: np.random.Generator) -> int:
        row = self.probs[s]
        return int(min(np.searchsorted(np.cumsum(row), rng.random() * row.sum(), side="right"),
                       len(row) - 1))

    def greedy(self) -> np.ndarray:
        return self.probs.argmax(axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Trajectory:
    """Sampled path; each step is ``(s, a, r, c, s_next)``."""

    start: int
    steps: list = field(default_factory=list)

    def append(self, s: int, a: int, r: float, c: float, s_next: int) -> None:
        expected = self.steps[-1][4] if self.steps else self.start
        if s != expected:
            raise InvalidArgument(f"step starts in {s} but the trajectory is in {expected}")
        self.steps.append((int(s), int(a), float(r), float(c), int(s_next)))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> list:
        return [self.start] + [step[4] for step in self.steps]


def path_return_and_cost(tr: Trajectory, gamma: float) -> tuple:
    v = c = 0.0
    disc = 1.0
    for _, _, r, cost, _ in tr.steps:
        v += disc * r
        c += disc * cost
        disc *= gamma
    return v, c


def _policy_arrays(m, pi: TabularPolicy):
    if pi.probs.shape != (m.num_states, m.num_actions):
        if pi.probs.shape == (m.base_num_states, m.num_actions) and m.terminal is not None:
            probs = np.vstack([pi.probs, np.full((1, m.num_actions), 1.0 / m.num_actions)])
        else:
            raise InvalidArgument(
                f"policy has shape {pi.probs.shape}, model needs {(m.num_states, m.num_actions)}")
    else:
        probs = pi.probs
    p_pi = np.einsum("sa,sat->st", probs, m.kernel)
    r_pi = (probs * m.reward).sum(axis=1)
    c_pi = (probs * m.cost).sum(axis=1)
    return p_pi, r_pi, c_pi


def evaluation_cap(m) -> int:
    g = max(m.r_max, m.c_max, 1e-12)
    return 10 * epsilon_horizon(m.gamma, g, g, 1e-10)


def evaluate_policy(m, pi: TabularPolicy, horizon: Optional[int] = None, tol: float = 1e-10):
    """Exact value and constraint-cost of ``pi`` for every state.

    ``horizon=None`` gives the asymptotic values (iterative evaluation until the
    Bellman residual drops below ``tol``); an integer gives T-step values.
    """
    p_pi, r_pi, c_pi = _policy_arrays(m, pi)
    g = m.gamma
    v = np.zeros(m.num_states)
    c = np.zeros(m.num_states)
    if horizon is not None:
        for _ in range(int(horizon)):
            v, c = r_pi + g * p_pi @ v, c_pi + g * p_pi @ c
        return v, c
    for _ in range(evaluation_cap(m)):
        v_new = r_pi + g * p_pi @ v
        c_new = c_pi + g * p_pi @ c
        done = max(np.abs(v_new - v).max(), np.abs(c_new - c).max()) <= tol
        v, c = v_new, c_new
        if done:
            break
    return v, c


def occupation_measure(m, pi: TabularPolicy, start: np.ndarray) -> np.ndarray:
    """Normalised discounted occupation f(s, a) = (1-gamma) sum_t gamma^t Pr(s_t=s, a_t=a)."""
    p_pi, _, _ = _policy_arrays(m, pi)
    probs = pi.probs if pi.probs.shape[0] == m.num_states else np.vstack(
        [pi.probs, np.full((1, m.num_actions), 1.0 / m.num_actions)])
    g = m.gamma
    mu = np.asarray(start, dtype=float)
    d = np.linalg.solve(np.eye(m.num_states) - g * p_pi.T, (1 - g) * mu)
    return d[:, None] * probs


def alpha_approximation_gap(m: Cmdp, m_hat: Cmdp) -> float:
    if m.kernel.shape != m_hat.kernel.shape:
        raise InvalidArgument(f"shape mismatch {m.kernel.shape} vs {m_hat.kernel.shape}")
    return float(max(np.abs(m.reward - m_hat.reward).max(),
                     np.abs(m.cost - m_hat.cost).max(),
                     np.abs(m.kernel - m_hat.kernel).max()))


def _almost_sure_reach(support: np.ndarray, target: int) -> np.ndarray:
    """States from which some policy reaches ``target`` with probability one."""
    S = support.shape[0]
    y = np.ones(S, dtype=bool)
    while True:
        stays = ~np.any(support & ~y[None, None, :], axis=2)
        x = np.zeros(S, dtype=bool)
        x[target] = True
        while True:
            hits = np.any(support & x[None, None, :], axis=2)
            x_new = x | np.any(stays & hits, axis=1)
            if np.array_equal(x_new, x):
                break
            x = x_new
        if np.array_equal(x, y):
            return y
        y = x


def diameter(m, tol: float = 1e-8, max_iter: int = 1_000_000) -> float:
    """max over s != s' of the minimal expected hitting time of s' from s.

    Returns ``math.inf`` when some pair is not almost-surely reachable.
    """
    kernel = m.kernel
    S = kernel.shape[0]
    if S == 1:
        return 0.0
    support = kernel > 0
    worst = 0.0
    for j in range(S):
        ok = _almost_sure_reach(support, j)
        if not ok.all():
            return math.inf
        h = np.zeros(S)
        for _ in range(max_iter):
            q = 1.0 + kernel @ h
            h_new = q.min(axis=1)
            h_new[j] = 0.0
            if np.abs(h_new - h).max() <= tol:
                h = h_new
                break
            h = h_new
        worst = max(worst, float(h.max()))
    return worst
