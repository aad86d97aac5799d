import numpy as np
import pytest

from ssimlab.grid import ScalarField2D

_ACCEPTANCE: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def field():
    def make(values):
        return ScalarField2D.from_array(np.asarray(values, dtype=np.float64))

    return make


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def check(name: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
