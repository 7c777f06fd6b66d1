"""Tabular lab for safe exploration in constrained MDPs."""
from .cmdp import (Cmdp, InducedCmdp, TabularPolicy, Trajectory, diameter, epsilon_horizon, escape_horizon,
                   evaluate_policy, g_max, induce)
from .driver import E4Config, RunLog, SafetyParams, derive_safety_params, run
from .environments import GridworldEnv, GridworldSpec, SampleEnv, build_gridworld, random_cmdp
from .errors import (ConfigurationInfeasible, InfeasibleError, InvalidArgument, ParseError, RunAborted,
                     SolverDiverged)
from .knowledge import KnowledgeBase, estimate_model
from .uncertainty import CredibleSet, L1Set, ModelSet, Singleton

__version__ = "0.1.0"
