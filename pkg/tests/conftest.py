import numpy as np
import pytest

ACCEPTANCE = {}


def record_criterion(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)


@pytest.fixture
def criterion():
    return record_criterion


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
