"""The main learning loop and the safety parameters it runs under."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .cmdp import (ESCAPE, EXPLOIT, EXPLORE, TabularPolicy, epsilon_horizon, escape_horizon,
                   evaluate_policy, g_max, induce)
from .errors import ConfigurationInfeasible, InfeasibleError, InvalidArgument, RunAborted
from .knowledge import KnowledgeBase, estimate_model, m_known_bound
from .solvers import SolverConfig, lagrangian_dp, occupation_lp, policy_gradient
from .solvers.dp import robust_evaluate, robust_value_iteration
from .uncertainty import CredibleSet, L1Set, Singleton, UncertaintySet

MODES = ("lemma9", "algorithm1", "fixed")


# ---------------------------------------------------------------------------
# safety parameters

@dataclass(frozen=True)
class SafetyParams:
    eps: float
    l: float
    d_prime: float
    T: int
    T_prime: Optional[int]
    mode: str
    T_k: Optional[int] = None
    T_u: Optional[int] = None


def _eps_lemma9(d, gamma, c_max, T_k, T_u):
    gk, gu = gamma ** T_k, gamma ** T_u
    first = gk * d / 2 + gu / (1 - gamma) * c_max
    second = -math.inf if gu == 0 else d - d / (2 * gu) - gk / (1 - gamma) * c_max
    return max(first, second)


def _eps_algorithm1(d, gamma, c_max):
    first = gamma * d / 2 + gamma ** 3 / (1 - gamma) * c_max
    second = -math.inf if gamma == 0 else d - d / (2 * gamma) + gamma / (1 - gamma) * c_max
    return max(first, second)


def _eps_for(d, gamma, c_max, r_max, mode, T_k, T_u, eps):
    """Return (eps, T_k, T_u) for one budget ``d``."""
    if mode == "fixed":
        if eps is None or eps <= 0:
            raise InvalidArgument("fixed mode needs a positive eps")
        return eps, T_k, T_u
    if mode == "algorithm1":
        return max(0.0, _eps_algorithm1(d, gamma, c_max)), T_k, T_u
    t_u = T_u if T_u is not None else escape_horizon(gamma, c_max, d / 2)
    if T_k is not None:
        return max(0.0, _eps_lemma9(d, gamma, c_max, T_k, t_u)), T_k, t_u
    # T_k follows the horizon of the resulting eps; start from T_u and iterate
    t_k = t_u
    for _ in range(100):
        e = max(_eps_lemma9(d, gamma, c_max, t_k, t_u), 1e-300)
        nxt = epsilon_horizon(gamma, r_max, c_max, e) if e > 0 else t_k
        if nxt == t_k:
            break
        t_k = nxt
    return max(0.0, _eps_lemma9(d, gamma, c_max, t_k, t_u)), t_k, t_u


def _minimal_budget(gamma, c_max, r_max, mode, T_k, T_u, eps) -> float:
    """Smallest d giving a positive known-state budget, or inf when none exists.

    Feasibility need not be monotone in d, so a grid scan locates the first
    workable budget before bisection refines it.  In lemma9 mode without an
    explicit T_u the escape budget d/2 must stay below c_max / (1 - gamma).
    """
    def ok(d):
        if d <= 2 * c_max:
            return False
        try:
            e, _, _ = _eps_for(d, gamma, c_max, r_max, mode, T_k, T_u, eps)
        except InvalidArgument:
            return False
        return d - 2 * e > 0

    lo = 2 * c_max
    if mode == "lemma9" and T_u is None:
        grid = np.linspace(lo, 2 * c_max / (1 - gamma), 402)[1:-1]
    else:
        grid = lo * 2.0 ** np.linspace(0.0, 40.0, 401)[1:]
    hits = [i for i, d in enumerate(grid) if ok(d)]
    if not hits:
        return math.inf
    hi = float(grid[hits[0]])
    lo = float(grid[hits[0] - 1]) if hits[0] > 0 else lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-9 * hi:
            break
    return hi


def derive_safety_params(d: float, gamma: float, c_max: float, r_max: float, mode: str = "lemma9",
                         T_k: Optional[int] = None, T_u: Optional[int] = None,
                         eps: Optional[float] = None) -> SafetyParams:
    """Slack and budgets for known and unknown states, with their horizons.

    ``lemma9`` uses (T_k, T_u); an omitted ``T_u`` defaults to the escape horizon
    and an omitted ``T_k`` is iterated to the eps-horizon of the resulting slack.
    ``algorithm1`` uses the discount-only formula and ``fixed`` takes ``eps`` as given.
    """
    if mode not in MODES:
        raise InvalidArgument(f"unknown mode {mode!r}")
    if not 0.0 <= gamma < 1.0:
        raise InvalidArgument(f"discount must lie in [0, 1), got {gamma}")
    if d <= 2 * c_max:
        raise ConfigurationInfeasible(f"budget {d} must exceed 2 c_max = {2 * c_max}",
                                      minimal_budget=_minimal_budget(gamma, c_max, r_max, mode, T_k, T_u, eps))
    e, t_k, t_u = _eps_for(d, gamma, c_max, r_max, mode, T_k, T_u, eps)
    l = d - 2 * e
    if l <= 0:
        need = _minimal_budget(gamma, c_max, r_max, mode, T_k, T_u, eps)
        raise ConfigurationInfeasible(
            f"known-state budget l = {l:.6g} is not positive (eps = {e:.6g}); smallest workable d is {need:.6g}",
            minimal_budget=need)
    d_prime = d / 2
    # an escape budget at or above c_max / (1 - gamma) can never be spent, so no horizon applies
    T_prime = escape_horizon(gamma, c_max, d_prime) if d_prime < c_max / (1 - gamma) else None
    T = epsilon_horizon(gamma, r_max, c_max, e) if e > 0 else 1
    return SafetyParams(e, l, d_prime, T, T_prime, mode, t_k, t_u)


def escape_budget_upper(d: float, eps: float, gamma: float, T_k: int, T_u: int, c_max: float) -> float:
    gk, gu = gamma ** T_k, gamma ** T_u
    first = eps / gk - gu / (1 - gamma) * c_max
    second = d - gu * (d - eps) - gu * gk / (1 - gamma) * c_max
    return max(first, second)


def tightened_budget(d: float, gamma: float, var_c: float, c_max: float = 1.0) -> tuple:
    """Three-sigma budget and its one-sided miss bound 1/(1 + 3^2) = 1/10."""
    spread = math.sqrt(var_c) / (1 - gamma)
    d_s = d - 3 * spread
    if d_s <= 2 * c_max:
        raise ConfigurationInfeasible(f"tightened budget {d_s:.6g} does not exceed 2 c_max",
                                      minimal_budget=2 * c_max + 3 * spread)
    return d_s, 1.0 / (1.0 + 3.0 ** 2)


def attempt_bound(S: int, m_known: int, eps: float, g_max_T: float, delta: float) -> int:
    if min(S, m_known, eps, g_max_T) <= 0 or not 0.0 < delta < 1.0:
        raise InvalidArgument("attempt_bound needs positive inputs and delta in (0, 1)")
    value = (g_max_T / eps) * (math.log(S / delta) + m_known)
    nearest = round(value)
    if abs(value - nearest) <= 1e-9 * max(1.0, value):
        return int(nearest)
    return math.ceil(value)


def balanced_action(counts: np.ndarray, s: int) -> int:
    return int(np.argmin(counts[s]))


def future_worst_cost(uset: UncertaintySet, s: int, cost_to_go: np.ndarray) -> float:
    """max over actions of the worst-case expected escape cost-to-go after one step from ``s``."""
    return max(uset.worst_case_expectation(s, a, cost_to_go)[0] for a in range(uset.num_actions))


def wandering_switch(C_p: float, t: int, gamma: float, future_cost: float, d_prime: float,
                     c_max: float) -> bool:
    """True when the path cost plus the discounted worst-case future reaches ``d' - c_max``."""
    return C_p + gamma ** t * future_cost >= d_prime - c_max


def exit_probabilities(m_explore, pi: TabularPolicy, T: int) -> np.ndarray:
    """Probability of reaching the terminal state within ``T`` steps, from every state."""
    probs = pi.probs if pi.probs.shape[0] == m_explore.num_states else np.vstack(
        [pi.probs, np.full((1, m_explore.num_actions), 1.0 / m_explore.num_actions)])
    p_pi = np.einsum("sa,sat->st", probs, m_explore.kernel)
    h = np.zeros(m_explore.num_states)
    h[m_explore.terminal] = 1.0
    for _ in range(T):
        h = p_pi @ h
    return h


def should_exploit(explore_policy: TabularPolicy, m_explore, eps: float, g_max_T: float, T: int,
                   s: int) -> bool:
    return bool(exit_probabilities(m_explore, explore_policy, T)[s] <= eps / g_max_T)


# ---------------------------------------------------------------------------
# configuration and logging

@dataclass
class E4Config:
    d: float = 10.0
    gamma: float = 0.99
    r_max: float = 1.0
    c_max: float = 1.0
    m_known: int = 32
    solver: str = "dp"
    mode: str = "fixed"
    eps: Optional[float] = 1.0
    T_k: Optional[int] = None
    T_u: Optional[int] = None
    uncertainty: str = "models"
    delta: float = 0.1
    delta_psi: float = 0.1
    max_steps: int = 200_000
    max_iterations: int = 1_000_000
    seed: int = 0
    tighten_budget: bool = False
    var_max_c: float = 0.0
    initial_known: Optional[List[int]] = None
    start_state: Optional[int] = None
    path_cost: str = "sampled"
    wander: bool = True
    resolve: str = "on_change"
    warm_start: bool = True
    solver_config: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.solver not in ("dp", "lp", "pg"):
            raise InvalidArgument(f"unknown solver {self.solver!r}")
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown mode {self.mode!r}")
        if self.uncertainty not in ("none", "l1", "bayes", "models", "oracle"):
            raise InvalidArgument(f"unknown uncertainty set {self.uncertainty!r}")
        if self.path_cost not in ("worst_case", "sampled"):
            raise InvalidArgument(f"unknown path cost mode {self.path_cost!r}")
        if self.resolve not in ("on_change", "every"):
            raise InvalidArgument(f"unknown resolve policy {self.resolve!r}")
        if self.d <= 2 * self.c_max:
            raise ConfigurationInfeasible(f"budget {self.d} must exceed 2 c_max", minimal_budget=2 * self.c_max)
        for name in ("delta", "delta_psi"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise InvalidArgument(f"{name} must lie in (0, 1)")
        if self.m_known < 1:
            raise InvalidArgument("m_known must be positive")

    def params(self) -> SafetyParams:
        d = self.d
        if self.tighten_budget:
            d, _ = tightened_budget(d, self.gamma, self.var_max_c, self.c_max)
        return derive_safety_params(d, self.gamma, self.c_max, self.r_max, self.mode, self.T_k, self.T_u, self.eps)


PHASES = ("exploit", "explore", "wander", "escape")
CSV_COLUMNS = ("step", "trajectory_id", "phase", "s", "a", "r", "c", "disc_cost_traj", "known_count")


@dataclass
class TrajectorySummary:
    trajectory_id: int
    kind: str              # "exploit", "explore" or "unknown"
    budget: float
    start: int
    length: int = 0
    disc_cost: float = 0.0
    disc_reward: float = 0.0
    switched_at: Optional[int] = None
    ended_known: bool = False


@dataclass
class RunLog:
    params: Optional[SafetyParams] = None
    steps: list = field(default_factory=list)
    trajectories: List[TrajectorySummary] = field(default_factory=list)
    known_curve: list = field(default_factory=list)
    attempts: int = 0
    exploit_trajectories: int = 0
    halt_reason: str = ""
    halt_state: Optional[int] = None
    final_policy: Optional[TabularPolicy] = None
    final_known: frozenset = frozenset()
    final_model_value: Optional[float] = None
    global_disc_cost: float = 0.0
    seed_samples: int = 0
    solves: int = 0
    wall_time: float = 0.0
    theoretical_m_known: Optional[int] = None

    def budget_violations(self, margin: float = 0.0) -> int:
        return sum(tr.disc_cost > tr.budget + margin for tr in self.trajectories)

    def unknown_overruns(self, T_prime: Optional[int]) -> int:
        if T_prime is None:
            return 0
        return sum(tr.length > T_prime for tr in self.trajectories if tr.kind == "unknown")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.steps:
                writer.writerow([repr(x) if isinstance(x, float) else x for x in row])

    def summary(self, c_max: float = 1.0) -> dict:
        p = self.params
        return {
            "halt_reason": self.halt_reason,
            "halt_state": self.halt_state,
            "steps": len(self.steps),
            "trajectories": len(self.trajectories),
            "attempts": self.attempts,
            "exploit_trajectories": self.exploit_trajectories,
            "known_final": len(self.final_known),
            "final_model_value": self.final_model_value,
            "budget_violations": self.budget_violations(),
            "budget_violations_margin": self.budget_violations(c_max),
            "unknown_overruns": None if p is None else self.unknown_overruns(p.T_prime),
            "global_disc_cost": self.global_disc_cost,
            "solves": self.solves,
            "wall_time": self.wall_time,
            "theoretical_m_known": self.theoretical_m_known,
            "params": None if p is None else asdict(p),
        }

    def write_json(self, path, c_max: float = 1.0) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(c_max), fh, indent=2)


# ---------------------------------------------------------------------------
# main loop

class _Planner:
    """Solves and caches the three policies for the current known set."""

    def __init__(self, cfg: E4Config, params: SafetyParams, S: int, A: int, unknown_set):
        self.cfg, self.p = cfg, params
        self.S, self.A = S, A
        self.unknown_set = unknown_set
        self.theta = {}
        self.solves = 0

    def _solve(self, m, uset, budget, start, key):
        cfg = self.cfg
        self.solves += 1
        if cfg.solver == "lp":
            return occupation_lp(m, budget, start).policy()
        if cfg.solver == "pg":
            theta0 = self.theta.get(key) if cfg.warm_start else None
            res = policy_gradient(m, uset, budget, cfg.solver_config, theta0, start)
            if res.policy.logits is not None:
                self.theta[key] = np.array(res.policy.logits)
            return res.policy
        return lagrangian_dp(m, uset, budget, cfg.solver_config, start).policy

    def solve(self, m, uset, budget, start, key):
        try:
            return self._solve(m, uset, budget, start, key)
        except InfeasibleError:
            # no policy meets the budget on the model: fall back to the cheapest one
            _, pi = robust_value_iteration(m.__class__(m.base, m.subset, ESCAPE, budget,
                                                       cost_override=None), uset, 0.0, tol=1e-8)
            return pi

    def unknown_uset(self, kb: KnowledgeBase, m_hat):
        kind = self.cfg.uncertainty
        if kind in ("models", "oracle"):
            if self.unknown_set is None:
                raise InvalidArgument(f"uncertainty {kind!r} needs an explicit set")
            return self.unknown_set
        if kind == "l1":
            return L1Set.from_counts(kb.trans_count, self.cfg.delta_psi, nominal=np.array(m_hat.kernel))
        if kind == "bayes":
            return CredibleSet.from_counts(kb.trans_count, self.cfg.delta_psi, seed=self.cfg.seed)
        return Singleton(m_hat.kernel)

    def refresh(self, kb: KnowledgeBase, known: frozenset):
        cfg, p = self.cfg, self.p
        self.known = known
        self.unknown = frozenset(range(self.S)) - known
        self.m_hat = m_hat = estimate_model(kb, cfg.gamma, cfg.d, cfg.r_max, cfg.c_max)
        self.known_set = Singleton(m_hat.kernel)
        self.exploit_pi = None
        self.exploit_cache = {}
        self.optimum_cache = {}
        if known:
            self.m_exploit = induce(m_hat, known, EXPLOIT, p.l)
            self.m_explore = induce(m_hat, known, EXPLORE, p.l)
            self.explore_pi = self.solve(self.m_explore, self.known_set, p.l, None, "explore")
            self.p_exit = exit_probabilities(self.m_explore, self.explore_pi, p.T)
            self.explore_cost = evaluate_policy(self.m_explore, self.explore_pi)[1]
        if self.unknown:
            self.uset = self.unknown_uset(kb, m_hat)
            self.m_escape = induce(m_hat, self.unknown, ESCAPE, p.d_prime)
            sweeps = None if p.T_prime is None else 2 * p.T_prime
            _, self.escape_pi = robust_value_iteration(self.m_escape, self.uset, 0.0, horizon=sweeps)
            _, c = robust_evaluate(self.m_escape, self.uset, self.escape_pi, horizon=None, tol=1e-8)
            self.escape_cost = self.m_escape.lift(c, 0.0)
            self.escape_actions = self.escape_pi.greedy()
            self.future = np.array([
                future_worst_cost(self.uset, s, self.escape_cost) if s in self.unknown else 0.0
                for s in range(self.S)])

    def explore_policy_for(self, s):
        if self.explore_cost[s] <= self.p.l + 1e-9:
            return self.explore_pi
        return self.solve(self.m_explore, self.known_set, self.p.l, s, "explore")

    def exploit_policy_for(self, s):
        if self.exploit_pi is None:
            self.exploit_pi = self.solve(self.m_exploit, self.known_set, self.p.l, None, "exploit")
            self.exploit_vc = evaluate_policy(self.m_exploit, self.exploit_pi)
        if self.exploit_vc[1][s] <= self.p.l + 1e-9:
            return self.exploit_pi, self.exploit_vc[0][s]
        if s not in self.exploit_cache:
            pi = self.solve(self.m_exploit, self.known_set, self.p.l, s, "exploit")
            self.exploit_cache[s] = (pi, evaluate_policy(self.m_exploit, pi)[0][s])
        return self.exploit_cache[s]

    def model_optimum(self, s):
        if s not in self.optimum_cache:
            try:
                res = lagrangian_dp(self.m_hat, Singleton(self.m_hat.kernel), self.cfg.d,
                                    SolverConfig(tol=1e-8), s)
                self.optimum_cache[s] = res.value
            except InfeasibleError:
                self.optimum_cache[s] = -math.inf
        return self.optimum_cache[s]


def _seed_known(env, kb: KnowledgeBase, states: Sequence[int]) -> int:
    n = 0
    for s in states:
        for a in range(kb.num_actions):
            while kb.n[s, a] < kb.m_known:
                r, c, s_next = env.sample(s, a)
                kb.record(s, a, r, c, s_next)
                n += 1
    return n


def run(env, cfg: E4Config, unknown_set: Optional[UncertaintySet] = None,
        on_step: Optional[Callable] = None) -> RunLog:
    """Run the main loop until the exploit test and halting criterion hold or the step limit is hit.

    ``env`` needs ``num_states``, ``num_actions`` and ``sample(s, a) -> (r, c, s_next)``.
    """
    t0 = time.perf_counter()
    params = cfg.params()
    S, A = env.num_states, env.num_actions
    rng = np.random.default_rng(cfg.seed)
    log = RunLog(params=params)
    g_T = g_max(cfg.r_max, cfg.gamma, params.T)
    try:
        log.theoretical_m_known = m_known_bound(S, params.T, g_T, params.eps,
                                                max(cfg.var_max_c, 1e-12), cfg.delta)
    except (InvalidArgument, OverflowError):
        log.theoretical_m_known = None

    kb = KnowledgeBase(S, A, cfg.m_known)
    initial = list(range(S)) if cfg.initial_known is None else list(cfg.initial_known)
    planner = _Planner(cfg, params, S, A, unknown_set)
    gamma = cfg.gamma

    def sample(s, a):
        try:
            return env.sample(s, a)
        except Exception as exc:  # environment faults end the run with what was recorded
            log.halt_reason = "aborted"
            raise RunAborted(f"environment fault at state {s}, action {a}: {exc}", log=log) from exc

    try:
        log.seed_samples = _seed_known(env, kb, initial)
    except Exception as exc:
        raise RunAborted(f"environment fault while seeding: {exc}", log=log) from exc
    s = int(cfg.start_state) if cfg.start_state is not None else int(rng.choice(initial)) if initial else 0
    step = 0
    global_disc = 1.0
    known = frozenset(np.flatnonzero(kb.known_mask()).tolist())
    planned_for = None

    def record(tr, phase, s, a, r, c, t):
        nonlocal step, global_disc
        tr.disc_cost += gamma ** t * c
        tr.disc_reward += gamma ** t * r
        tr.length += 1
        log.global_disc_cost += global_disc * c
        global_disc *= gamma
        log.steps.append((step, tr.trajectory_id, phase, s, a, r, c, tr.disc_cost, len(known)))
        step += 1
        if on_step is not None:
            on_step(step, phase, s, a, r, c)

    iteration = 0
    while iteration < cfg.max_iterations:
        iteration += 1
        if step >= cfg.max_steps:
            log.halt_reason = "max_steps"
            break
        if planned_for != known or cfg.resolve == "every":
            planner.refresh(kb, known)
            planned_for = known
            log.known_curve.append((step, len(known)))

        if s in known:
            p_hat = planner.p_exit[s]
            exploit = p_hat <= params.eps / g_T
            if exploit:
                pi, v_model = planner.exploit_policy_for(s)
                if v_model >= planner.model_optimum(s) - params.eps:
                    log.halt_reason = "converged"
                    log.halt_state = s
                    log.final_policy = pi
                    log.final_model_value = float(v_model)
                    break
                kind, budget = "exploit", params.l
                log.exploit_trajectories += 1
            else:
                pi = planner.explore_policy_for(s)
                kind, budget = "explore", params.l
                log.attempts += 1
            tr = TrajectorySummary(len(log.trajectories), kind, budget, s)
            log.trajectories.append(tr)
            for t in range(params.T):
                if step >= cfg.max_steps:
                    break
                a = pi.act(s, rng)
                r, c, s_next = sample(s, a)
                kb.record(s, a, r, c, s_next)
                record(tr, kind, s, a, r, c, t)
                s = s_next
                if s not in known:
                    break
            tr.ended_known = s in known
            if s in known:
                continue

        # unknown states: balanced wandering monitored by the switching rule, then escape
        tr = TrajectorySummary(len(log.trajectories), "unknown", params.d_prime, s)
        log.trajectories.append(tr)
        wandering = cfg.wander
        if not wandering:
            tr.switched_at = 0
        path_cost = 0.0
        t = 0
        while s not in known and step < cfg.max_steps:
            if wandering:
                a, phase = balanced_action(kb.n, s), "wander"
            else:
                a, phase = int(planner.escape_actions[s]), "escape"
            r, c, s_next = sample(s, a)
            kb.record(s, a, r, c, s_next)
            record(tr, phase, s, a, r, c, t)
            path_cost += gamma ** t * (cfg.c_max if cfg.path_cost == "worst_case" else c)
            if kb.is_known(s) and s not in known:
                known = known | {s}
            s = s_next
            t += 1
            if wandering and s not in known and wandering_switch(
                    path_cost, t, gamma, planner.future[s], params.d_prime, cfg.c_max):
                wandering = False
                tr.switched_at = t
        tr.ended_known = s in known
    else:
        log.halt_reason = "max_iterations"

    if not log.halt_reason:
        log.halt_reason = "max_steps"
    if log.final_policy is None and s in known:
        if planned_for != known:
            planner.refresh(kb, known)
        log.final_policy = planner.exploit_policy_for(s)[0]
    log.final_known = known
    log.halt_state = s if log.halt_state is None else log.halt_state
    log.solves = planner.solves
    log.wall_time = time.perf_counter() - t0
    return log
