"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class ParseError(ValueError):
    """Malformed model or config file. Carries the offending line when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleError(RuntimeError):
    """No policy meets the budget. ``best_cost`` is the lowest cost achieved."""

    def __init__(self, message, best_cost=None, basis=None):
        self.best_cost = best_cost
        self.basis = basis
        super().__init__(message)


class ConfigurationInfeasible(ValueError):
    """Safety parameters cannot be derived (e.g. l <= 0)."""

    def __init__(self, message, minimal_budget=None):
        self.minimal_budget = minimal_budget
        super().__init__(message)


class SolverDiverged(RuntimeError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)


class RunAborted(RuntimeError):
    """Environment fault during a run; ``log`` holds what was recorded so far."""

    def __init__(self, message, log=None):
        self.log = log
        super().__init__(message)
