import numpy as np
import pytest

from infocomb import build_hierarchy


@pytest.fixture
def three():
    """Total over two bottom series."""
    return build_hierarchy([("Total", "A"), ("Total", "B")])


@pytest.fixture
def regional():
    edges = [(None, "Total")]
    for region in "ABC":
        edges.append(("Total", region))
        edges += [(region, f"{region}{i}") for i in (1, 2)]
    return build_hierarchy(edges)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


def random_tree(rng, max_children=3, max_depth=3):
    """A random tree hierarchy with at least one aggregate."""
    edges, counter = [], [0]

    def grow(node, depth):
        if depth >= max_depth:
            return
        k = int(rng.integers(0 if depth else 2, max_children + 1))
        if k == 1:
            k = 2
        for _ in range(k):
            counter[0] += 1
            child = f"n{counter[0]}"
            edges.append((node, child))
            grow(child, depth + 1)

    grow("root", 0)
    return build_hierarchy(edges)


def coherent_panel(h, T, rng, noise=0.0):
    bottom = rng.standard_normal((T, h.n)).cumsum(axis=0) * 0.1 + rng.normal(5, 1, h.n)
    Y = h.aggregate(bottom)
    return Y + noise * rng.standard_normal(Y.shape) if noise else Y


# PASS/FAIL lines recorded by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
