import numpy as np
import pytest

from mgfpp.game import MarkovGame


def single_state(r1, r2=None, gamma=0.0, controller=None):
    """Repeated matrix game: one state that always returns to itself."""
    r1 = np.asarray(r1, dtype=float)[None]
    r2 = r1 if r2 is None else np.asarray(r2, dtype=float)[None]
    rewards = np.stack([r1, r2])
    trans = np.ones((1, *r1.shape[1:], 1))
    return MarkovGame(rewards, trans, gamma, controller=controller)


@pytest.fixture
def pennies():
    m = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return single_state(m, -m, gamma=0.5, controller=0)


@pytest.fixture
def coordination():
    r = np.array([[1.0, 0.0], [0.0, 0.0]])
    return single_state(r, r, gamma=0.5, controller=0)


ACCEPTANCE_LINES: list[str] = []


def acceptance_line(label: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
