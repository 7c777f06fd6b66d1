"""Concrete CMDPs (the wall-avoiding gridworld and random instances) plus file I/O and sample-only wrappers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cmdp import Cmdp
from .errors import InvalidArgument, ParseError
from .uncertainty import ModelSet

NORTH, WEST, SOUTH, EAST, STAY = range(5)
ACTION_NAMES = ("north", "west", "south", "east", "stay")
MOVES = ((0, 1), (-1, 0), (0, -1), (1, 0), (0, 0))


@dataclass(frozen=True)
class GridworldSpec:
    """Grid of ``width`` x ``height`` cells addressed by 1-based ``(x, y)``; y=1 is the south wall."""

    width: int = 10
    height: int = 10
    slip: float = 0.05
    wall_cost: float = 1.0
    gamma: float = 0.99
    budget: float = 10.0
    extra_rewards: Dict[Tuple[int, int], float] = field(default_factory=dict)
    initial_known: Optional[Tuple[Tuple[int, int], ...]] = None

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise InvalidArgument("the grid must be at least 2 x 2")
        if not 0.0 <= self.slip < 1.0:
            raise InvalidArgument("slip must lie in [0, 1)")

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def index(self, x: int, y: int) -> int:
        return (y - 1) * self.width + (x - 1)

    def coords(self, s: int) -> Tuple[int, int]:
        return s % self.width + 1, s // self.width + 1

    def known_cells(self) -> List[int]:
        cells = self.initial_known
        if cells is None:
            cells = tuple((x, 1) for x in range(1, self.width))
        return [self.index(x, y) for x, y in cells]

    def inside(self, x: int, y: int) -> bool:
        return 1 <= x <= self.width and 1 <= y <= self.height

    def move(self, s: int, a: int) -> Tuple[int, bool]:
        """Deterministic outcome of action ``a``: (next state, hit a wall)."""
        x, y = self.coords(s)
        dx, dy = MOVES[a]
        if self.inside(x + dx, y + dy):
            return self.index(x + dx, y + dy), False
        return s, True

    def on_boundary(self, s: int) -> bool:
        x, y = self.coords(s)
        return x in (1, self.width) or y in (1, self.height)

    def next_clockwise(self, s: int) -> Optional[int]:
        """Successor on the clockwise boundary cycle; ``None`` for interior cells."""
        x, y = self.coords(s)
        W, H = self.width, self.height
        if y == H and x < W:
            return self.index(x + 1, y)
        if x == W and y > 1:
            return self.index(x, y - 1)
        if y == 1 and x > 1:
            return self.index(x - 1, y)
        if x == 1 and y < H:
            return self.index(x, y + 1)
        return None


def build_gridworld(spec: GridworldSpec = GridworldSpec()) -> Cmdp:
    """Gridworld where hitting a wall costs ``wall_cost`` and clockwise boundary progress pays 1.

    With probability ``1 - slip`` the intended move is executed; otherwise the
    outcome is drawn uniformly from the five action outcomes.
    """
    S, A = spec.num_states, 5
    kernel = np.zeros((S, A, S))
    reward = np.zeros((S, A))
    cost = np.zeros((S, A))
    for s in range(S):
        succ = spec.next_clockwise(s)
        bonus = spec.extra_rewards.get(spec.coords(s), 0.0)
        for a in range(A):
            for b in range(A):
                p = (1 - spec.slip) * (a == b) + spec.slip / A
                if p == 0.0:
                    continue
                t, hit = spec.move(s, b)
                kernel[s, a, t] += p
                cost[s, a] += p * spec.wall_cost * hit
                reward[s, a] += p * (t == succ)
            reward[s, a] = min(1.0, reward[s, a] + bonus)
    return Cmdp(kernel, reward, cost, spec.gamma, spec.budget, r_max=1.0, c_max=spec.wall_cost)


def gridworld_model_set(spec: GridworldSpec = GridworldSpec(), tau_max: float = 0.1, radius: float = 2.0,
                        oracle_validity: bool = True) -> ModelSet:
    """Five expert action models: free moves, then one per wall making that move a null move.

    Neighbourhoods are the cells within Euclidean ``radius`` of the typical outcome.
    With ``oracle_validity`` each wall model applies only on its own wall and the
    free-move model only off the walls.  Transfer rules follow the running
    example: walking east keeps the south-wall model and adds the east-wall model,
    unless the west-wall model held, which hands over to the south-wall model.
    """
    S = spec.num_states
    base = np.array([[spec.move(s, a)[0] for a in range(5)] for s in range(S)])
    models = [base]
    for blocked in (NORTH, WEST, SOUTH, EAST):
        g = base.copy()
        g[:, blocked] = np.arange(S)
        models.append(g)
    coords = np.array([spec.coords(s) for s in range(S)], dtype=float)
    dist = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2))
    neighbours = dist <= radius + 1e-12

    valid = None
    if oracle_validity:
        x, y = coords[:, 0], coords[:, 1]
        walls = [y == spec.height, x == 1, y == 1, x == spec.width]
        interior = ~np.any(walls, axis=0)
        valid = np.array([interior] + walls)
    g3, g4, g5 = 2, 3, 4
    transfer = {(g3, EAST): [g4], (g4, EAST): [g4, g5]}
    return ModelSet(np.array(models), neighbours, tau_max, ["g1", "g2", "g3", "g4", "g5"], valid,
                    None, transfer)


def random_cmdp(S: int, A: int, gamma: float, d: float, density: float = 1.0, seed: int = 0,
                r_max: float = 1.0, c_max: float = 1.0) -> Cmdp:
    """Dirichlet kernel rows on random supports of ceil(density S) states; uniform rewards and costs."""
    if S < 1 or A < 1:
        raise InvalidArgument("need at least one state and one action")
    if not 0.0 < density <= 1.0:
        raise InvalidArgument("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    k = max(1, int(np.ceil(density * S)))
    kernel = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            support = rng.choice(S, size=k, replace=False)
            kernel[s, a, support] = rng.dirichlet(np.ones(k))
    kernel /= kernel.sum(axis=2, keepdims=True)
    reward = rng.uniform(0.0, r_max, size=(S, A))
    cost = rng.uniform(0.0, c_max, size=(S, A))
    return Cmdp(kernel, reward, cost, gamma, d, r_max=r_max, c_max=c_max)


# ---------------------------------------------------------------------------
# file format

_REQUIRED = ("num_states", "num_actions", "gamma", "budget", "r_max", "c_max", "kernel", "reward", "cost")


def _rows(rows) -> str:
    return "[\n" + ",\n".join("    " + json.dumps(list(map(float, r))) for r in rows) + "\n  ]"


def dumps_cmdp(m: Cmdp) -> str:
    S, A = m.num_states, m.num_actions
    parts = [
        f'  "num_states": {S}',
        f'  "num_actions": {A}',
        f'  "gamma": {json.dumps(float(m.gamma))}',
        f'  "budget": {json.dumps(float(m.budget))}',
        f'  "r_max": {json.dumps(float(m.r_max))}',
        f'  "c_max": {json.dumps(float(m.c_max))}',
        f'  "kernel": {_rows(m.kernel.reshape(S * A, S))}',
        f'  "reward": {_rows(m.reward)}',
        f'  "cost": {_rows(m.cost)}',
    ]
    if m.noise != "deterministic" or m.reward_var.any() or m.cost_var.any():
        noise = {"family": m.noise, "reward_var": m.reward_var.tolist(), "cost_var": m.cost_var.tolist()}
        parts.append(f'  "noise": {json.dumps(noise)}')
    return "{\n" + ",\n".join(parts) + "\n}\n"


def loads_cmdp(text: str) -> Cmdp:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ParseError("top level must be an object", line=1)
    missing = [k for k in _REQUIRED if k not in data]
    if missing:
        raise ParseError(f"missing field(s): {', '.join(missing)}")
    lines = text.splitlines()

    def line_of(key):
        for i, ln in enumerate(lines, 1):
            if f'"{key}"' in ln:
                return i
        return None

    S, A = int(data["num_states"]), int(data["num_actions"])
    arrays = {}
    for key, shape in (("kernel", (S * A, S)), ("reward", (S, A)), ("cost", (S, A))):
        try:
            arr = np.array(data[key], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"field {key!r} is not numeric", line=line_of(key)) from exc
        if arr.shape != shape:
            raise ParseError(f"field {key!r} has shape {arr.shape}, expected {shape}", line=line_of(key))
        arrays[key] = arr
    noise = data.get("noise") or {}
    return Cmdp(arrays["kernel"].reshape(S, A, S), arrays["reward"], arrays["cost"],
                float(data["gamma"]), float(data["budget"]), r_max=float(data["r_max"]),
                c_max=float(data["c_max"]),
                reward_var=None if "reward_var" not in noise else np.array(noise["reward_var"], dtype=float),
                cost_var=None if "cost_var" not in noise else np.array(noise["cost_var"], dtype=float),
                noise=noise.get("family", "deterministic"))


def save_cmdp(path, m: Cmdp) -> None:
    Path(path).write_text(dumps_cmdp(m))


def load_cmdp(path) -> Cmdp:
    return loads_cmdp(Path(path).read_text())


# ---------------------------------------------------------------------------
# sample-only environments

class SampleEnv:
    """Hides a CMDP behind ``sample(s, a) -> (r, c, s_next)``."""

    def __init__(self, model: Cmdp, seed: int = 0):
        self._model = model
        self.rng = np.random.default_rng(seed)
        self._cum = np.cumsum(model.kernel, axis=2)
        self.state = 0

    @property
    def num_states(self) -> int:
        return self._model.num_states

    @property
    def num_actions(self) -> int:
        return self._model.num_actions

    @property
    def bounds(self) -> Tuple[float, float]:
        return self._model.r_max, self._model.c_max

    def reveal_model(self) -> Cmdp:
        """Test gate: the hidden model, for oracles and acceptance checks only."""
        return self._model

    def reset(self, s: int) -> None:
        self.state = int(s)

    def _noisy(self, mean: float, var: float, hi: float) -> float:
        if self._model.noise == "deterministic" or var <= 0:
            return float(mean)
        sd = float(np.sqrt(var))
        for _ in range(1000):
            x = self.rng.normal(mean, sd)
            if 0.0 <= x <= hi:
                return float(x)
        return float(np.clip(mean, 0.0, hi))

    def sample(self, s: int, a: int) -> Tuple[float, float, int]:
        m = self._model
        u = self.rng.random()
        s_next = int(min(np.searchsorted(self._cum[s, a], u, side="right"), m.num_states - 1))
        r = self._noisy(m.reward[s, a], m.reward_var[s, a], m.r_max)
        c = self._noisy(m.cost[s, a], m.cost_var[s, a], m.c_max)
        self.state = s_next
        return r, c, s_next


class GridworldEnv(SampleEnv):
    """Gridworld whose reward and cost depend on the realised outcome."""

    def __init__(self, spec: GridworldSpec = GridworldSpec(), seed: int = 0):
        super().__init__(build_gridworld(spec), seed)
        self.spec = spec
        self._succ = [spec.next_clockwise(s) for s in range(spec.num_states)]

    def sample(self, s: int, a: int) -> Tuple[float, float, int]:
        spec = self.spec
        if self.rng.random() < spec.slip:
            b = int(self.rng.integers(5))
        else:
            b = a
        s_next, hit = spec.move(s, b)
        r = 1.0 if s_next == self._succ[s] else 0.0
        r = min(1.0, r + spec.extra_rewards.get(spec.coords(s), 0.0))
        self.state = s_next
        return r, spec.wall_cost if hit else 0.0, s_next
