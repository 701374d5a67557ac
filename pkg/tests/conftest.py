import time

import pytest

from trustmpc import SimParams, load_cycle, run

ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)

_ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def us06():
    return load_cycle("us06")


@pytest.fixture(scope="session")
def us06_sweep(us06):
    """US06 runs with the constant-acceleration estimator for every alpha, plus wall time."""
    t0 = time.perf_counter()
    logs = {a: run(us06, predictor="ca", alpha=a) for a in ALPHAS}
    return logs, time.perf_counter() - t0


@pytest.fixture(scope="session")
def us06_params(us06):
    return SimParams().with_cycle(us06.speeds)
