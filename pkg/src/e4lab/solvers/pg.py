"""Sampled primal-dual policy gradient on softmax policies against worst-case dynamics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..cmdp import TabularPolicy, epsilon_horizon, evaluate_policy, occupation_measure, softmax
from ..errors import SolverDiverged
from ..uncertainty import UncertaintySet
from .common import SolverConfig, pad_policy, start_vector
from .dp import nominal_set, robust_evaluate


@dataclass
class PgResult:
    policy: TabularPolicy
    lam: float
    value: float
    cost: float
    trace: list = field(default_factory=list)


def _horizon(m, cfg: SolverConfig) -> int:
    if cfg.horizon is not None:
        return cfg.horizon
    return epsilon_horizon(m.gamma, m.r_max, m.c_max, 1e-3)


def policy_gradient(m, uset: Optional[UncertaintySet], budget: float, cfg: SolverConfig = SolverConfig(),
                    theta0: Optional[np.ndarray] = None, start=None, trace_every: int = 0) -> PgResult:
    """Run ``cfg.iterations`` sampled trajectories, updating logits and the multiplier.

    Each trajectory follows the kernel rows that maximise the current policy's
    worst-case cost-to-go.  In the backward pass the logits ascend
    ``gamma^t (V_t - lam C_t) grad log pi(a_t | s_t)`` using returns-to-go, and the
    multiplier moves by ``C - budget`` once per trajectory, projected onto lam >= 0,
    where ``C`` is the sampled cost ``C_0`` (``dual_signal="sampled"``) or the
    policy's worst-case expected cost from the start distribution (``"model"``).

    Primal-dual iterates rotate around the saddle point, so the returned policy
    averages the nominal occupation measures of the last ``cfg.average_tail``
    fraction of iterates (0 returns the final iterate).
    """
    uset = nominal_set(m) if uset is None else uset
    rng = np.random.default_rng(cfg.seed)
    T = _horizon(m, cfg)
    g = m.gamma
    mu = start_vector(m, start)
    mask = np.zeros(m.base_num_states, dtype=bool)
    mask[m.interior] = True
    A = m.num_actions
    theta = np.zeros((m.num_states, A)) if theta0 is None else np.array(theta0, dtype=float)
    lam = 0.0
    r_int, c_int = m.interior_reward, m.interior_cost
    trace = []
    avg_from = cfg.iterations - int(round(cfg.average_tail * cfg.iterations))
    f_sum = np.zeros((m.num_states, A))

    for k in range(cfg.iterations):
        probs = softmax(theta)
        pi = TabularPolicy(probs)
        if k >= avg_from and avg_from < cfg.iterations:
            f_sum += occupation_measure(m, pi, mu)
        v_togo, c_togo = robust_evaluate(m, uset, pi, horizon=T)
        w = m.lift(c_togo, m.terminal_cost)
        baseline = v_togo - lam * c_togo if cfg.baseline else np.zeros(m.num_states)

        s = int(rng.choice(m.num_states, p=mu))
        cum_pi = np.cumsum(probs, axis=1)
        draws = rng.random((T, 2))
        steps = []
        exited = False
        for t in range(T):
            a = min(int(np.searchsorted(cum_pi[s], draws[t, 0] * cum_pi[s, -1], side="right")), A - 1)
            row = uset.worst_case_row(s, a, w)
            s_next = min(int(np.searchsorted(np.cumsum(row), draws[t, 1], side="right")), len(row) - 1)
            steps.append((s, a, r_int[s, a], c_int[s, a]))
            if not mask[s_next]:
                exited = True
                break
            s = s_next

        v = m.terminal_reward if exited else 0.0
        c = m.terminal_cost if exited else 0.0
        eta1 = cfg.eta_theta(k)
        for t in range(len(steps) - 1, -1, -1):
            s_t, a_t, r_t, c_t = steps[t]
            v = r_t + g * v
            c = c_t + g * c
            grad = -probs[s_t]
            grad[a_t] += 1.0
            step = eta1 * (g ** t) * (v - lam * c - baseline[s_t])
            if cfg.normalise:
                step /= 1.0 + lam
            theta[s_t] += step * grad
        dual_cost = float(mu @ c_togo) if cfg.dual_signal == "model" else c
        lam = max(0.0, lam + cfg.eta_lambda(k) * (dual_cost - budget))
        if not np.all(np.isfinite(theta)):
            raise SolverDiverged(f"logits became non-finite at iteration {k}", iteration=k)
        if trace_every and k % trace_every == 0:
            trace.append((k, v, c, lam))

    if avg_from < cfg.iterations:
        pi = _policy_from_occupation(f_sum, theta)
    else:
        pi = TabularPolicy.from_logits(theta)
    vr, cr = robust_evaluate(m, uset, pi)
    return PgResult(pi, lam, float(mu @ vr), float(mu @ cr), trace)


def _policy_from_occupation(f: np.ndarray, theta: np.ndarray) -> TabularPolicy:
    mass = f.sum(axis=1, keepdims=True)
    fallback = softmax(theta)
    probs = np.where(mass > 1e-300, f / np.where(mass > 0, mass, 1.0), fallback)
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


def solve_policy_gradient(m, uset: Optional[UncertaintySet], budget: float, cfg: SolverConfig = SolverConfig(),
                          theta0: Optional[np.ndarray] = None, start=None) -> TabularPolicy:
    return policy_gradient(m, uset, budget, cfg, theta0, start).policy


def exact_lagrangian(m, theta: np.ndarray, lam: float, budget: float, horizon: int, start=None) -> float:
    """``mu @ (V - lam (C - budget))`` for the softmax policy, evaluated exactly over ``horizon`` steps."""
    mu = start_vector(m, start)
    v, c = evaluate_policy(m, TabularPolicy.from_logits(theta), horizon)
    return float(mu @ v - lam * (mu @ c - budget))


def lagrangian_gradient_estimate(m, theta: np.ndarray, lam: float, horizon: int, n_traj: int,
                                 rng: np.random.Generator, start=None) -> np.ndarray:
    """Monte Carlo mean of the per-trajectory gradient estimator on the nominal model.

    Uses the folded rewards/costs of ``m`` so the estimate targets the same
    quantity as :func:`exact_lagrangian`.
    """
    mu = start_vector(m, start)
    probs = pad_policy(m, softmax(theta))
    g = m.gamma
    n_states, A = probs.shape
    s = rng.choice(n_states, size=n_traj, p=mu)
    states = np.empty((horizon, n_traj), dtype=int)
    actions = np.empty((horizon, n_traj), dtype=int)
    rewards = np.empty((horizon, n_traj))
    costs = np.empty((horizon, n_traj))
    cum_pi = np.cumsum(probs, axis=1)
    cum_k = np.cumsum(m.kernel, axis=2)
    for t in range(horizon):
        a = np.minimum((cum_pi[s] < rng.random(n_traj)[:, None]).sum(axis=1), A - 1)
        states[t], actions[t] = s, a
        rewards[t] = m.reward[s, a]
        costs[t] = m.cost[s, a]
        s = np.minimum((cum_k[s, a] < rng.random(n_traj)[:, None]).sum(axis=1), n_states - 1)
    v = np.zeros(n_traj)
    c = np.zeros(n_traj)
    grad = np.zeros((n_traj, n_states, A))
    idx = np.arange(n_traj)
    for t in range(horizon - 1, -1, -1):
        v = rewards[t] + g * v
        c = costs[t] + g * c
        weight = (g ** t) * (v - lam * c)
        st, at = states[t], actions[t]
        grad[idx, st] -= weight[:, None] * probs[st]
        grad[idx, st, at] += weight
    return grad.mean(axis=0)
