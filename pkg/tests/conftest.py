"""Shared pytest plumbing.

The acceptance tests register one line per criterion through the
``acceptance`` fixture; the collected lines are printed as a block at the
end of the run so the verdicts are visible regardless of capture mode.
"""
import numpy as np
import pytest

_ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance():
    def report(name: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  [{detail}]"
        _ACCEPTANCE_LINES.append(line)
        assert ok, f"{name}: {detail}"
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _standard_precision():
    """Tests that switch precision must not leak it into neighbours."""
    from crvnn import tensor as T
    T.set_precision("standard")
    yield
    T.set_precision("standard")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
