import numpy as np
import pytest

from bspwalk.graph import Graph


# one "[PASS]/[FAIL] criterion: detail" line per acceptance criterion,
# echoed at the end of the run whether or not output capture is on
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def triangle_tail():
    # 0-1-2 triangle with a tail 2-3
    return Graph.from_edges(4, [0, 1, 2, 2], [1, 2, 0, 3])


@pytest.fixture
def small_weighted():
    src = [0, 0, 1, 1, 2, 3, 4, 4]
    dst = [1, 2, 2, 3, 4, 4, 5, 0]
    w = [1.0, 2.0, 0.5, 3.0, 1.5, 2.5, 1.0, 4.0]
    return Graph.from_edges(6, src, dst, w)


def random_graph(n, m, seed, weighted=False):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    w = rng.uniform(0.5, 3.0, m) if weighted else None
    return Graph.from_edges(n, src, dst, w)
