import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from e4lab.cmdp import Cmdp

settings.register_profile("lab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one line per acceptance criterion; printed in the terminal summary."""
    def report(number, passed, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def bandit(gamma=0.5, reward=(1.0, 0.0), cost=(1.0, 0.0), budget=1.0):
    """One state, two actions, both self-loops."""
    return Cmdp(np.ones((1, 2, 1)), np.array([reward], dtype=float), np.array([cost], dtype=float),
                gamma, budget)


def chain(gamma=0.9, rewards=(1.0, 0.0), costs=(0.0, 0.0)):
    """Two states swapping deterministically under the single action."""
    kernel = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    return Cmdp(kernel, np.array(rewards, dtype=float)[:, None], np.array(costs, dtype=float)[:, None],
                gamma, 3.0)
