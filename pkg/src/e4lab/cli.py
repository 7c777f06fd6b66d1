"""Command-line entry point with the ``run``, ``params`` and ``validate`` subcommands.

Exit codes: 0 ok, 2 config error, 3 infeasible safety parameters, 4 runtime abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .cmdp import diameter
from .driver import E4Config, derive_safety_params, run
from .environments import GridworldEnv, GridworldSpec, SampleEnv, build_gridworld, gridworld_model_set, load_cmdp
from .errors import ConfigurationInfeasible, InvalidArgument, ParseError, RunAborted, SolverDiverged
from .solvers import SolverConfig
from .uncertainty import Singleton

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_ABORT = 0, 2, 3, 4
SOLVERS = ("pg", "dp", "lp")
UNCERTAINTY = ("none", "l1", "bayes", "models", "oracle")
MODES = ("algorithm1", "lemma9", "fixed")

log = logging.getLogger("e4lab")


class ConfigError(ValueError):
    pass


def _check_keys(block: dict, allowed, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


@dataclass
class ExperimentConfig:
    """Parsed experiment file; every block is checked for unknown keys."""

    environment: dict = field(default_factory=lambda: {"type": "gridworld"})
    e4: dict = field(default_factory=dict)
    solver: dict = field(default_factory=lambda: {"name": "dp"})
    uncertainty: dict = field(default_factory=lambda: {"type": "models"})
    replicates: int = 1
    seed: int = 0
    out: str = "runs"

    TOP_KEYS = ("environment", "e4", "solver", "uncertainty", "replicates", "seed", "out")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        _check_keys(data, cls.TOP_KEYS, "config")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        env = self.environment
        _check_keys(env, {"type", "path", "initial_known"} | _field_names(GridworldSpec), "environment")
        kind = env.get("type", "gridworld")
        if kind not in ("gridworld", "file"):
            raise ConfigError(f"environment type must be 'gridworld' or 'file', got {kind!r}")
        if kind == "file" and "path" not in env:
            raise ConfigError("file environment needs a 'path'")
        skipped = {"solver_config", "solver", "uncertainty", "seed"}
        _check_keys(self.e4, _field_names(E4Config) - skipped, "e4")
        _check_keys(self.solver, {"name"} | _field_names(SolverConfig), "solver")
        if self.solver.get("name", "dp") not in SOLVERS:
            raise ConfigError(f"solver name must be one of {SOLVERS}")
        _check_keys(self.uncertainty, {"type", "tau_max", "radius"}, "uncertainty")
        if self.uncertainty.get("type", "models") not in UNCERTAINTY:
            raise ConfigError(f"uncertainty type must be one of {UNCERTAINTY}")
        if not isinstance(self.replicates, int) or self.replicates < 1:
            raise ConfigError("replicates must be a positive integer")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")

    # -- builders ---------------------------------------------------------

    def gridworld_spec(self) -> Optional[GridworldSpec]:
        env = dict(self.environment)
        if env.pop("type", "gridworld") != "gridworld":
            return None
        env.pop("path", None)
        env.pop("initial_known", None)
        if "initial_known" in self.environment and self.environment["initial_known"] is not None:
            env["initial_known"] = tuple(tuple(c) for c in self.environment["initial_known"])
        if "extra_rewards" in env:
            env["extra_rewards"] = {tuple(json.loads(k)): float(v) for k, v in env["extra_rewards"].items()}
        try:
            return GridworldSpec(**env)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def true_model(self):
        spec = self.gridworld_spec()
        if spec is not None:
            return build_gridworld(spec)
        return load_cmdp(self.environment["path"])

    def make_env(self, seed: int):
        spec = self.gridworld_spec()
        if spec is not None:
            return GridworldEnv(spec, seed=seed)
        return SampleEnv(load_cmdp(self.environment["path"]), seed=seed)

    def e4_config(self, seed: int) -> E4Config:
        spec = self.gridworld_spec()
        values = dict(self.e4)
        model = None
        if spec is not None:
            values.setdefault("initial_known", spec.known_cells())
            values.setdefault("gamma", spec.gamma)
            values.setdefault("d", spec.budget)
            values.setdefault("c_max", spec.wall_cost)
        else:
            model = load_cmdp(self.environment["path"])
            values.setdefault("gamma", model.gamma)
            values.setdefault("d", model.budget)
            values.setdefault("r_max", model.r_max)
            values.setdefault("c_max", model.c_max)
            if "initial_known" in self.environment:
                values.setdefault("initial_known", self.environment["initial_known"])
        solver = dict(self.solver)
        name = solver.pop("name", "dp")
        return E4Config(solver=name, uncertainty=self.uncertainty.get("type", "models"), seed=seed,
                        solver_config=SolverConfig(**solver), **values)

    def unknown_set(self, env):
        kind = self.uncertainty.get("type", "models")
        if kind == "models":
            spec = self.gridworld_spec()
            if spec is None:
                raise ConfigError("the 'models' uncertainty set is only defined for the gridworld")
            return gridworld_model_set(spec, tau_max=self.uncertainty.get("tau_max", 0.1),
                                       radius=self.uncertainty.get("radius", 2.0))
        if kind == "oracle":
            return Singleton(env.reveal_model().kernel)
        return None


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    e4 = dict(cfg.e4)
    for flag, key in (("d", "d"), ("gamma", "gamma"), ("m_known", "m_known"), ("mode", "mode"),
                      ("eps", "eps")):
        value = getattr(args, flag, None)
        if value is not None:
            e4[key] = value
    solver = dict(cfg.solver)
    if getattr(args, "solver", None):
        solver["name"] = args.solver
    uncertainty = dict(cfg.uncertainty)
    if getattr(args, "uncertainty", None):
        uncertainty["type"] = args.uncertainty
    out = replace(cfg, e4=e4, solver=solver, uncertainty=uncertainty)
    if getattr(args, "seed", None) is not None:
        out.seed = args.seed
    if getattr(args, "replicates", None) is not None:
        out.replicates = args.replicates
    if getattr(args, "out", None):
        out.out = args.out
    out.validate()
    return out


def _mean_ci(values: List[float]) -> dict:
    arr = np.asarray([v for v in values if v is not None and math.isfinite(v)], dtype=float)
    if len(arr) == 0:
        return {"mean": None, "ci95": None, "n": 0}
    half = 1.96 * arr.std(ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0
    return {"mean": float(arr.mean()), "ci95": [float(arr.mean() - half), float(arr.mean() + half)],
            "n": int(len(arr))}


def _one_run(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    e4 = cfg.e4_config(seed)
    env = cfg.make_env(seed)
    log.info("seed %d: starting run (solver=%s, uncertainty=%s)", seed, e4.solver, e4.uncertainty)
    result = run(env, e4, cfg.unknown_set(env))
    result.write_csv(out / f"run_{seed}.csv")
    result.write_json(out / f"run_{seed}.json", e4.c_max)
    summary = result.summary(e4.c_max)
    summary["seed"] = seed
    summary["known_curve"] = [list(p) for p in result.known_curve]
    return summary


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    cfg = apply_overrides(cfg, args)
    cfg.e4_config(cfg.seed).params()        # surface infeasible parameters before any output
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed + i for i in range(cfg.replicates)]
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        summaries = list(pool.map(lambda s: _one_run(cfg, s, out), seeds))
    aggregate = {
        "replicates": len(summaries),
        "global_disc_cost": _mean_ci([s["global_disc_cost"] for s in summaries]),
        "final_model_value": _mean_ci([s["final_model_value"] for s in summaries]),
        "known_final": _mean_ci([s["known_final"] for s in summaries]),
        "runs": summaries,
    }
    with open(out / "aggregate.json", "w") as fh:
        json.dump(aggregate, fh, indent=2)
    for s in summaries:
        print(f"seed {s['seed']}: {s['halt_reason']}, {s['known_final']} known, "
              f"{s['attempts']} attempts, {s['budget_violations_margin']} budget violations")
    return EXIT_OK


def cmd_params(args) -> int:
    p = derive_safety_params(args.d, args.gamma, args.c_max, args.r_max, args.mode or "lemma9",
                             args.T_k, args.T_u, args.eps)
    print(f"eps      = {p.eps:.6g}")
    print(f"l        = {p.l:.6g}")
    print(f"d_prime  = {p.d_prime:.6g}")
    print(f"T        = {p.T}")
    print(f"T_prime  = {'unbounded' if p.T_prime is None else p.T_prime}")
    if p.T_k is not None:
        print(f"T_k      = {p.T_k}")
    if p.T_u is not None:
        print(f"T_u      = {p.T_u}")
    return EXIT_OK


def validate_config(cfg: ExperimentConfig) -> tuple:
    """Return (errors, warnings) for a parsed config."""
    errors, warnings = [], []
    try:
        model = cfg.true_model()
    except (ParseError, InvalidArgument, OSError) as exc:
        return [f"environment: {exc}"], warnings
    try:
        e4 = cfg.e4_config(cfg.seed)
        params = e4.params()
    except ConfigurationInfeasible as exc:
        return [f"safety parameters: {exc}"], warnings
    except (InvalidArgument, TypeError) as exc:
        return [f"e4: {exc}"], warnings
    if e4.initial_known is not None:
        bad = [s for s in e4.initial_known if not 0 <= s < model.num_states]
        if bad:
            errors.append(f"initial_known holds states outside the model: {bad}")
    if cfg.uncertainty.get("type", "models") == "models" and cfg.gridworld_spec() is None:
        errors.append("the 'models' uncertainty set is only defined for the gridworld")
    D = diameter(model)
    if params.T_prime is not None and D > params.T_prime - 1:
        warnings.append(f"diameter {D:.4g} exceeds T_prime - 1 = {params.T_prime - 1}; "
                        "escapes may need more than T_prime steps")
    return errors, warnings


def cmd_validate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    errors, warnings = validate_config(cfg)
    for w in warnings:
        print(f"warning: {w}")
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if any(e.startswith("safety parameters") for e in errors):
        return EXIT_INFEASIBLE
    if errors:
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="e4lab", description="Safe explore/exploit/escape tabular lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run seeded replicates and write CSV/JSON logs")
    p_run.add_argument("--config", help="experiment config (JSON); defaults to the gridworld")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--replicates", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--solver", choices=SOLVERS)
    p_run.add_argument("--uncertainty", choices=UNCERTAINTY)
    p_run.add_argument("--mode", choices=MODES)
    p_run.add_argument("--eps", type=float, help="slack for --mode fixed")
    p_run.add_argument("--m-known", dest="m_known", type=int)
    p_run.add_argument("--d", type=float)
    p_run.add_argument("--gamma", type=float)
    p_run.add_argument("--jobs", type=int, default=1, help="replicates run on this many threads")
    p_run.set_defaults(func=cmd_run)

    p_par = sub.add_parser("params", help="print the derived safety parameters")
    p_par.add_argument("--d", type=float, required=True)
    p_par.add_argument("--gamma", type=float, required=True)
    p_par.add_argument("--c-max", dest="c_max", type=float, default=1.0)
    p_par.add_argument("--r-max", dest="r_max", type=float, default=1.0)
    p_par.add_argument("--mode", choices=MODES, default="lemma9")
    p_par.add_argument("--T-k", dest="T_k", type=int)
    p_par.add_argument("--T-u", dest="T_u", type=int)
    p_par.add_argument("--eps", type=float)
    p_par.set_defaults(func=cmd_params)

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("E4_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationInfeasible as exc:
        print(f"infeasible safety parameters: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ParseError, InvalidArgument, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunAborted, SolverDiverged) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
