import pytest

from tmoser.constants import make_context
from tmoser.green import solve_green

GREEN_RMAX = {2: 40.0, 3: 45.0, 4: 45.0}

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def ctx2():
    return make_context(2)


@pytest.fixture(scope="session")
def ctx3():
    return make_context(3)


@pytest.fixture(scope="session")
def greens():
    """Green solutions for n = 2, 3, 4, shared across the session."""
    return {n: solve_green(make_context(n), GREEN_RMAX[n], 1e-5) for n in (2, 3, 4)}


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    """List of (number, title, passed, detail) lines echoed after the run."""
    return pytestconfig.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(lines):
        mark = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{mark}] {number:2d}. {title}: {detail}")
