"""Robust dynamic programming on the Lagrangian problem, with an outer search over the multiplier."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..cmdp import TabularPolicy, evaluation_cap, occupation_measure
from ..errors import InfeasibleError, InvalidArgument
from ..uncertainty import Singleton, UncertaintySet
from .common import SolverConfig, lagrangian_arrays, pad_policy, start_vector


def nominal_set(m) -> Singleton:
    base = getattr(m, "base", m)
    return Singleton(base.kernel)


def _to_full(m, base_values: np.ndarray) -> np.ndarray:
    full = np.zeros(m.num_states)
    interior = m.interior
    full[interior] = base_values[interior]
    return full


def robust_value_iteration(m, uset: Optional[UncertaintySet], lam: float, horizon: Optional[int] = None,
                           tol: float = 1e-10, init: Optional[np.ndarray] = None):
    """Greedy policy for the Lagrangian reward against a value-minimising adversary.

    Returns ``(values, policy)`` with values indexed like ``m``'s states (the
    terminal index, if any, holds 0).  ``horizon=None`` iterates until the sup-norm
    change drops below ``tol``.
    """
    if lam < 0:
        raise InvalidArgument("the multiplier must be non-negative")
    uset = nominal_set(m) if uset is None else uset
    reward, term = lagrangian_arrays(m, lam)
    g = m.gamma
    interior = m.interior
    v = np.zeros(m.base_num_states) if init is None else np.array(init[: m.base_num_states], dtype=float)
    sweeps = horizon if horizon is not None else evaluation_cap(m)
    q = None
    for _ in range(int(sweeps)):
        w = m.lift(v, term)
        kernel = uset.worst_case_kernel(-w)
        q = reward + g * (kernel @ w)
        v_new = q.max(axis=1)
        done = horizon is None and np.abs(v_new[interior] - v[interior]).max() <= tol
        v = v_new
        if done:
            break
    if q is None:
        q = np.zeros((m.base_num_states, m.num_actions))
    actions = np.zeros(m.num_states, dtype=int)
    actions[interior] = q[interior].argmax(axis=1)
    return _to_full(m, v), TabularPolicy.deterministic(actions, m.num_actions)


def robust_evaluate(m, uset: Optional[UncertaintySet], pi: TabularPolicy, horizon: Optional[int] = None,
                    tol: float = 1e-10, init: Optional[tuple] = None):
    """Value and worst-case constraint-cost of ``pi``; the adversary maximises cost.

    The value is reported under the same cost-maximising kernels.
    """
    uset = nominal_set(m) if uset is None else uset
    probs = pad_policy(m, pi.probs)[: m.base_num_states]
    r_pi = (probs * m.interior_reward).sum(axis=1)
    c_pi = (probs * m.interior_cost).sum(axis=1)
    g = m.gamma
    interior = m.interior
    if init is None:
        v = np.zeros(m.base_num_states)
        c = np.zeros(m.base_num_states)
    else:
        v = np.array(init[0][: m.base_num_states], dtype=float)
        c = np.array(init[1][: m.base_num_states], dtype=float)
    sweeps = horizon if horizon is not None else evaluation_cap(m)
    for _ in range(int(sweeps)):
        wc = m.lift(c, m.terminal_cost)
        wv = m.lift(v, m.terminal_reward)
        kernel = uset.worst_case_kernel(wc)
        kp = np.einsum("sa,sat->st", probs, kernel)
        c_new = c_pi + g * kp @ wc
        v_new = r_pi + g * kp @ wv
        done = horizon is None and max(np.abs(c_new[interior] - c[interior]).max(),
                                       np.abs(v_new[interior] - v[interior]).max()) <= tol
        v, c = v_new, c_new
        if done:
            break
    return _to_full(m, v), _to_full(m, c)


@dataclass
class DpResult:
    policy: TabularPolicy
    lam: float
    value: float
    cost: float


def _mix(m, pi_lo: TabularPolicy, pi_hi: TabularPolicy, q: float, mu: np.ndarray) -> TabularPolicy:
    """Policy whose nominal occupation measure is ``q f_lo + (1 - q) f_hi``."""
    f = q * occupation_measure(m, pi_lo, mu) + (1 - q) * occupation_measure(m, pi_hi, mu)
    mass = f.sum(axis=1, keepdims=True)
    probs = np.where(mass > 1e-300, f / np.where(mass > 0, mass, 1.0), pad_policy(m, pi_hi.probs))
    probs /= probs.sum(axis=1, keepdims=True)
    return TabularPolicy(probs)


def lagrangian_dp(m, uset: Optional[UncertaintySet], budget: float, cfg: SolverConfig = SolverConfig(),
                  start=None) -> DpResult:
    """Smallest multiplier whose greedy policy meets the budget, mixed at the boundary.

    The multiplier is doubled until feasible (up to ``r_max / eps_dual``) and then
    bisected.  The two greedy policies bracketing the budget are combined through
    their occupation measures so the mixture spends the budget exactly.
    """
    uset = nominal_set(m) if uset is None else uset
    mu = start_vector(m, start)
    cache = {}

    def solve(lam, warm=None):
        v, pi = robust_value_iteration(m, uset, lam, cfg.horizon, cfg.tol,
                                       init=None if warm is None else warm[0])
        vr, cr = robust_evaluate(m, uset, pi, cfg.horizon, cfg.tol)
        cache[lam] = (v, pi, float(mu @ vr), float(mu @ cr))
        return cache[lam]

    slack = 1e-9 * max(1.0, abs(budget))
    _, pi0, v0, c0 = solve(0.0)
    if c0 <= budget + slack or getattr(m, "variant", None) == "escape":
        if c0 > budget + slack:
            raise InfeasibleError(f"minimal worst-case cost {c0:.6g} exceeds budget {budget:.6g}", best_cost=c0)
        return DpResult(pi0, 0.0, v0, c0)

    lam_max = m.r_max / cfg.eps_dual
    lam_lo, lam_hi = 0.0, 1.0
    lo, hi = cache[0.0], None
    best_cost = c0
    while True:
        hi = solve(lam_hi, lo)
        best_cost = min(best_cost, hi[3])
        if hi[3] <= budget + slack:
            break
        lam_lo, lo = lam_hi, hi
        if lam_hi >= lam_max:
            raise InfeasibleError(
                f"no multiplier up to {lam_max:.6g} meets budget {budget:.6g}; best cost {best_cost:.6g}",
                best_cost=best_cost)
        lam_hi = min(2.0 * lam_hi, lam_max)

    for _ in range(cfg.bisect_iters):
        if lam_hi - lam_lo <= 1e-12 * max(1.0, lam_hi):
            break
        mid = 0.5 * (lam_lo + lam_hi)
        res = solve(mid, hi)
        if res[3] <= budget + slack:
            lam_hi, hi = mid, res
        else:
            lam_lo, lo = mid, res

    _, pi_hi, v_hi, c_hi = hi
    _, pi_lo, v_lo, c_lo = lo
    if c_lo - c_hi <= slack:
        return DpResult(pi_hi, lam_hi, v_hi, c_hi)
    q = float(np.clip((budget - c_hi) / (c_lo - c_hi), 0.0, 1.0))
    mixed = _mix(m, pi_lo, pi_hi, q, mu)
    vm, cm = robust_evaluate(m, uset, mixed, cfg.horizon, cfg.tol)
    vm, cm = float(mu @ vm), float(mu @ cm)
    if cm <= budget + 1e-7 * max(1.0, abs(budget)):
        return DpResult(mixed, lam_hi, vm, cm)
    return DpResult(pi_hi, lam_hi, v_hi, c_hi)


def solve_lagrangian_dp(m, uset: Optional[UncertaintySet], budget: float, cfg: SolverConfig = SolverConfig(),
                        start=None) -> TabularPolicy:
    return lagrangian_dp(m, uset, budget, cfg, start).policy
