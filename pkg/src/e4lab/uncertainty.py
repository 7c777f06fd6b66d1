"""Ambiguity sets over transition kernels and their worst-case expectation queries.

Every set is defined over the base state space (``S`` states, ``A`` actions).
The vectorised query ``worst_case_kernel(w)`` returns, for every pair (s, a),
the member kernel row maximising ``row @ w``; pass ``-w`` to minimise instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgument


class UncertaintySet:
    """Common interface; subclasses implement :meth:`worst_case_kernel`."""

    num_states: int
    num_actions: int

    def worst_case_kernel(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def worst_case_values(self, w: np.ndarray) -> np.ndarray:
        return self.worst_case_kernel(w) @ w

    def worst_case_expectation(self, s: int, a: int, v: np.ndarray) -> Tuple[float, np.ndarray]:
        row = self.worst_case_row(s, a, v)
        return float(row @ v), row

    def worst_case_row(self, s: int, a: int, v: np.ndarray) -> np.ndarray:
        return self.worst_case_kernel(v)[s, a]

    def contains(self, s: int, a: int, row: np.ndarray, tol: float = 1e-9) -> bool:
        raise NotImplementedError

    def nominal(self) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Singleton(UncertaintySet):
    """The degenerate set holding one kernel."""

    kernel: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @property
    def num_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def num_actions(self) -> int:
        return self.kernel.shape[1]

    def worst_case_kernel(self, w):
        return self.kernel

    def worst_case_values(self, w):
        return self.kernel @ w

    def worst_case_row(self, s, a, v):
        return self.kernel[s, a]

    def contains(self, s, a, row, tol=1e-9):
        return bool(np.abs(np.asarray(row) - self.kernel[s, a]).max() <= tol)

    def nominal(self):
        return self.kernel


def hoeffding_budget(n: int, S: int, A: int, delta_psi: float, convention: str = "literal") -> float:
    """L1 radius from visit count ``n``.

    ``convention="literal"`` divides the log argument by (1 - delta_psi);
    ``"conventional"`` divides by delta_psi as a Hoeffding bound usually does.
    """
    if not 0.0 < delta_psi < 1.0:
        raise InvalidArgument(f"delta_psi must lie in (0, 1), got {delta_psi}")
    if n <= 0:
        return 2.0
    denom = {"literal": 1.0 - delta_psi, "conventional": delta_psi}.get(convention)
    if denom is None:
        raise InvalidArgument(f"unknown convention {convention!r}")
    log_term = math.log(S * A / denom) + S * math.log(2.0)
    return float(min(2.0, max(0.0, math.sqrt(2.0 / n * log_term))))


def credible_budget(counts: Sequence[float], delta_psi: float, n_samples: int = 2000,
                    rng: Optional[np.random.Generator] = None) -> float:
    """Posterior (1 - delta_psi)-quantile of the L1 distance to the posterior mean."""
    counts = np.asarray(counts, dtype=float)
    if np.any(counts <= 0):
        raise InvalidArgument("Dirichlet pseudo-counts must be positive")
    if n_samples < 1000:
        raise InvalidArgument("credible_budget needs at least 1000 posterior samples")
    if not 0.0 < delta_psi <= 1.0:
        raise InvalidArgument(f"delta_psi must lie in (0, 1], got {delta_psi}")
    rng = np.random.default_rng(0) if rng is None else rng
    mean = counts / counts.sum()
    draws = rng.dirichlet(counts, size=n_samples)
    dist = np.abs(draws - mean).sum(axis=1)
    return float(np.quantile(dist, 1.0 - delta_psi))


def _l1_worst_rows(nominal: np.ndarray, radius: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Closed-form maximiser of ``row @ w`` over each L1 ball intersected with the simplex.

    Mass ``min(radius/2, 1 - p[top])`` is moved onto the highest-w state and taken
    from the lowest-w states first.
    """
    order = np.argsort(w, kind="stable")
    top = order[-1]
    p_sorted = nominal[..., order]
    shift = np.minimum(radius / 2.0, 1.0 - nominal[..., top])
    before = np.cumsum(p_sorted, axis=-1) - p_sorted
    removed = np.clip(shift[..., None] - before, 0.0, p_sorted)
    removed[..., -1] = 0.0
    out_sorted = p_sorted - removed
    out_sorted[..., -1] += shift
    out = np.empty_like(nominal)
    out[..., order] = out_sorted
    return out


@dataclass(frozen=True, eq=False)
class L1Set(UncertaintySet):
    """(s,a)-rectangular L1 ball ``||P - nominal||_1 <= radius[s, a]``."""

    center: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        r = np.broadcast_to(np.asarray(self.radius, dtype=float), c.shape[:2]).copy()
        if np.any(r < 0):
            raise InvalidArgument("L1 radii must be non-negative")
        c.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @property
    def num_states(self) -> int:
        return self.center.shape[0]

    @property
    def num_actions(self) -> int:
        return self.center.shape[1]

    def worst_case_kernel(self, w):
        return _l1_worst_rows(self.center, self.radius, np.asarray(w, dtype=float))

    def worst_case_row(self, s, a, v):
        return _l1_worst_rows(self.center[s, a], self.radius[s, a], np.asarray(v, dtype=float))

    def contains(self, s, a, row, tol=1e-9):
        row = np.asarray(row, dtype=float)
        on_simplex = row.min() >= -tol and abs(row.sum() - 1.0) <= tol
        return bool(on_simplex and np.abs(row - self.center[s, a]).sum() <= self.radius[s, a] + tol)

    def nominal(self):
        return self.center

    @classmethod
    def from_counts(cls, trans_count: np.ndarray, delta_psi: float, convention: str = "literal",
                    nominal: Optional[np.ndarray] = None) -> "L1Set":
        """Hoeffding ball around the empirical kernel (self-loop where unvisited)."""
        trans_count = np.asarray(trans_count)
        S, A, _ = trans_count.shape
        n = trans_count.sum(axis=2)
        if nominal is None:
            nominal = trans_count / np.maximum(n, 1)[:, :, None]
            s_idx, a_idx = np.nonzero(n == 0)
            nominal[s_idx, a_idx, s_idx] = 1.0
        radius = np.array([[hoeffding_budget(int(n[s, a]), S, A, delta_psi, convention)
                            for a in range(A)] for s in range(S)])
        return cls(nominal, radius)


class CredibleSet(L1Set):
    """L1 ball around the Dirichlet posterior mean with a posterior-quantile radius."""

    def __init__(self, dirichlet_counts: np.ndarray, delta_psi: float, n_samples: int = 2000,
                 seed: int = 0):
        counts = np.asarray(dirichlet_counts, dtype=float)
        if np.any(counts <= 0):
            raise InvalidArgument("Dirichlet pseudo-counts must be positive")
        rng = np.random.default_rng(seed)
        S, A, _ = counts.shape
        radius = np.array([[credible_budget(counts[s, a], delta_psi, n_samples, rng)
                            for a in range(A)] for s in range(S)])
        super().__init__(counts / counts.sum(axis=2, keepdims=True), radius)
        object.__setattr__(self, "dirichlet_counts", counts)
        object.__setattr__(self, "delta_psi", delta_psi)

    @classmethod
    def from_counts(cls, trans_count: np.ndarray, delta_psi: float, prior: float = 0.1,
                    n_samples: int = 2000, seed: int = 0) -> "CredibleSet":
        return cls(np.asarray(trans_count, dtype=float) + prior, delta_psi, n_samples, seed)


@dataclass(eq=False)
class ModelSet(UncertaintySet):
    """Expert action models with a bounded error rate.

    ``next_state[i, s, a]`` is the typical outcome under model ``i``.  The kernel of
    model ``i`` at error rate ``tau`` puts ``1 - tau`` on that outcome and spreads
    ``tau`` evenly over ``neighbours[outcome]`` (a boolean S x S matrix).
    ``valid[i, s]`` restricts where a model may apply; ``active[i]`` is the current
    belief after path filtering.  ``transfer[(i, a)]`` lists the models implied
    after taking action ``a`` while model ``i`` held.
    """

    next_state: np.ndarray
    neighbours: np.ndarray
    tau_max: float
    names: Optional[List[str]] = None
    valid: Optional[np.ndarray] = None
    active: Optional[np.ndarray] = None
    transfer: Dict[Tuple[int, int], List[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.next_state = np.asarray(self.next_state, dtype=int)
        n, S, A = self.next_state.shape
        self.neighbours = np.asarray(self.neighbours, dtype=bool)
        if self.neighbours.shape != (S, S):
            raise InvalidArgument(f"neighbours must have shape {(S, S)}")
        if not 0.0 <= self.tau_max < 1.0:
            raise InvalidArgument("tau_max must lie in [0, 1)")
        if self.next_state.min() < 0 or self.next_state.max() >= S:
            raise InvalidArgument("model outcome out of range")
        if self.names is None:
            self.names = [f"g{i + 1}" for i in range(n)]
        self.valid = np.ones((n, S), dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        self.active = np.ones(n, dtype=bool) if self.active is None else np.asarray(self.active, dtype=bool)
        # kernels[i, j] is model i at tau = 0 (j=0) and tau = tau_max (j=1)
        onehot = np.zeros((n, S, A, S))
        np.put_along_axis(onehot, self.next_state[..., None], 1.0, axis=3)
        spread = self.neighbours[self.next_state].astype(float)
        spread /= np.maximum(spread.sum(axis=3, keepdims=True), 1.0)
        # a neighbourhood always contains its centre, so an empty row only arises
        # from a malformed mask; fall back to the typical outcome in that case
        empty = spread.sum(axis=3) == 0
        spread[empty] = onehot[empty]
        self._onehot = onehot
        self._spread = spread
        self._kernels = np.stack([onehot, (1 - self.tau_max) * onehot + self.tau_max * spread], axis=1)

    @property
    def num_models(self) -> int:
        return self.next_state.shape[0]

    @property
    def num_states(self) -> int:
        return self.next_state.shape[1]

    @property
    def num_actions(self) -> int:
        return self.next_state.shape[2]

    def applicable(self) -> np.ndarray:
        """Boolean (n, S): models usable at each state (never empty per state)."""
        use = self.active[:, None] & self.valid
        none = ~use.any(axis=0)
        use[:, none] = self.valid[:, none]
        none = ~use.any(axis=0)
        use[:, none] = True
        return use

    def kernel(self, i: int, tau: float) -> np.ndarray:
        return (1 - tau) * self._onehot[i] + tau * self._spread[i]

    def worst_case_kernel(self, w):
        w = np.asarray(w, dtype=float)
        vals = self._kernels @ w                         # (n, 2, S, A)
        use = self.applicable()
        vals = np.where(use[:, None, :, None], vals, -np.inf)
        n = self.num_models
        flat = vals.transpose(2, 3, 0, 1).reshape(self.num_states, self.num_actions, 2 * n)
        best = flat.argmax(axis=2)
        i, j = np.divmod(best, 2)
        s_idx, a_idx = np.indices(best.shape)
        return self._kernels[i, j, s_idx, a_idx]

    def worst_case_row(self, s, a, v):
        v = np.asarray(v, dtype=float)
        use = self.applicable()[:, s]
        cand = self._kernels[use][:, :, s, a]            # (k, 2, S)
        vals = cand @ v
        k, j = np.unravel_index(np.argmax(vals), vals.shape)
        return cand[k, j]

    def contains(self, s, a, row, tol=1e-9):
        row = np.asarray(row, dtype=float)
        use = self.applicable()[:, s]
        for i in np.flatnonzero(use):
            base, sp = self._onehot[i, s, a], self._spread[i, s, a]
            diff = sp - base
            denom = diff @ diff
            tau = 0.0 if denom == 0 else float(np.clip((row - base) @ diff / denom, 0.0, self.tau_max))
            if np.abs(base + tau * diff - row).max() <= tol:
                return True
        return False

    def nominal(self):
        use = self.applicable()
        first = use.argmax(axis=0)
        s_idx = np.arange(self.num_states)
        return self._kernels[first, 0, s_idx]

    def with_active(self, active: Iterable[int]) -> "ModelSet":
        flags = np.zeros(self.num_models, dtype=bool)
        flags[list(active)] = True
        return ModelSet(self.next_state, self.neighbours, self.tau_max, list(self.names), self.valid,
                        flags, dict(self.transfer))

    def active_models(self) -> List[int]:
        return np.flatnonzero(self.active).tolist()


def filter_models(ms: ModelSet, path: Sequence[Tuple[int, int, int]], threshold: float = 1e-3,
                  tau_grid: int = 11) -> ModelSet:
    """Track which models explain ``path`` (a list of ``(s, a, s_next)`` steps).

    Each hypothesis carries its path likelihood profiled over an error-rate grid in
    [0, tau_max].  After every step hypotheses whose likelihood falls below
    ``threshold`` times the best one are dropped, then the transfer table maps each
    survivor to the models it implies (a model without a rule keeps itself).
    The returned set is never empty.
    """
    if not path:
        return ms
    taus = np.linspace(0.0, ms.tau_max, tau_grid)
    with np.errstate(divide="ignore"):
        log_taus = np.log(taus)
        log_keep = np.log1p(-taus)
    hyp = {i: np.zeros(tau_grid) for i in ms.active_models()}
    if not hyp:
        hyp = {i: np.zeros(tau_grid) for i in range(ms.num_models)}
    log_thr = math.log(threshold)
    for s, a, s_next in path:
        scored = {}
        for i, ll in hyp.items():
            typical = ms.next_state[i, s, a]
            spread = ms._spread[i, s, a, s_next]
            with np.errstate(divide="ignore"):
                step = np.logaddexp(log_keep if typical == s_next else -np.inf,
                                    log_taus + math.log(spread) if spread > 0 else -np.inf)
            scored[i] = ll + step
        best = max(v.max() for v in scored.values())
        if best == -np.inf:
            # nothing explains the step; keep the prior hypotheses rather than emptying the set
            survivors = {i: np.zeros(tau_grid) for i in hyp}
        else:
            survivors = {i: v - best for i, v in scored.items() if v.max() >= log_thr}
        nxt: Dict[int, np.ndarray] = {}
        for i, ll in survivors.items():
            for j in ms.transfer.get((i, a), [i]):
                nxt[j] = np.maximum(nxt[j], ll) if j in nxt else ll.copy()
        hyp = nxt
    return ms.with_active(sorted(hyp))
