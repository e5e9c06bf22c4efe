import numpy as np
import pytest

from hughes_sl.geometry import Exit, Geometry, Obstacle, classify_nodes
from hughes_sl.grid import GridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def closed_room():
    return classify_nodes(GridSpec(1.0, 20), Geometry())


@pytest.fixture
def one_exit_room():
    geo = Geometry(exits=(Exit("east", (1.0, 0.3), (1.0, 0.7)),))
    return classify_nodes(GridSpec(1.0, 20), geo)


@pytest.fixture
def obstacle_room():
    geo = Geometry(exits=(Exit("east", (1.0, 0.4), (1.0, 0.6)),),
                   obstacles=(Obstacle((0.4, 0.4), (0.6, 0.6)),))
    return classify_nodes(GridSpec(1.0, 20), geo)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
