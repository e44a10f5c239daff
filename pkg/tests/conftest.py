from importlib.resources import files

import pytest

from coinfection_branch.model import load_params

ACCEPTANCE = {}


def fixture_params(name):
    return load_params(files("coinfection_branch") / "data" / f"{name}.json")


@pytest.fixture(scope="session")
def P1():
    return fixture_params("P1")


@pytest.fixture(scope="session")
def P2():
    return fixture_params("P2")


@pytest.fixture(scope="session")
def P3():
    return fixture_params("P3")


@pytest.fixture
def record():
    """Record an acceptance verdict printed in the terminal summary."""

    def _record(criterion, ok, detail=""):
        ACCEPTANCE[criterion] = (bool(ok), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}  {detail}")
