import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infocomb import (
    HierarchyError,
    PanelMatrix,
    build_hierarchy,
    coherency_residual,
    is_coherent,
    max_coherency_violation,
)
from infocomb.hierarchy import Hierarchy

from conftest import coherent_panel, random_tree


def test_two_leaf_tree(three):
    assert three.nodes == ("Total", "A", "B")
    np.testing.assert_array_equal(three.S, [[1, 1], [1, 0], [0, 1]])
    np.testing.assert_array_equal(three.S_perp, [[1], [-1], [-1]])
    np.testing.assert_array_equal(three.J, [[0, 1, 0], [0, 0, 1]])


def test_single_node():
    h = build_hierarchy([(None, "Total")])
    np.testing.assert_array_equal(h.S, [[1.0]])
    assert h.S_perp.shape == (1, 0)
    assert max_coherency_violation(h, np.ones((4, 1))) == 0.0


def test_three_level_tree():
    h = build_hierarchy([("Total", "X"), ("Total", "Y"), ("X", "x1"), ("X", "x2"), ("Y", "y1")])
    assert h.S.shape == (6, 3)
    assert h.nodes[:3] == ("Total", "X", "Y")
    np.testing.assert_array_equal(h.S[:3], [[1, 1, 1], [1, 1, 0], [0, 0, 1]])
    np.testing.assert_array_equal(h.S[3:], np.eye(3))


def _descendant_leaves(edges, node):
    kids = [c for p, c in edges if p == node]
    if not kids:
        return {node}
    return set().union(*(_descendant_leaves(edges, k) for k in kids))


def test_s_matches_descendant_enumeration(rng):
    for _ in range(20):
        h = random_tree(rng)
        edges = [(p, c) for p, c in h.edges() if p is not None]
        leaves = h.bottom_nodes
        for i, node in enumerate(h.nodes):
            below = _descendant_leaves(edges, node)
            np.testing.assert_array_equal(h.S[i], [1.0 if leaf in below else 0.0 for leaf in leaves])


@pytest.mark.parametrize(
    "edges, match",
    [
        ([], "empty"),
        ([("A", "A")], "cycle"),
        ([("A", "B"), ("B", "A")], "cycle"),
        ([("T", "A"), ("T", "B"), ("U", "A")], "duplicate"),
        ([("T", "A"), ("A", "B"), ("B", "C"), ("C", "A")], "duplicate|cycle"),
    ],
)
def test_invalid_edges(edges, match):
    with pytest.raises(HierarchyError, match=match):
        build_hierarchy(edges)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_structure_invariants(seed):
    rng = np.random.default_rng(seed)
    h = random_tree(rng)
    assert np.all(h.S_perp.T @ h.S == 0)
    assert np.linalg.matrix_rank(h.S) == h.n
    Y = coherent_panel(h, 15, rng)
    assert np.max(np.abs(coherency_residual(h, Y))) <= 1e-12 * np.max(np.abs(Y))


def test_residual_of_incoherent_vector(three):
    r = coherency_residual(three, np.array([[2.0, 1.2, 0.9]]))
    np.testing.assert_allclose(r, [[-0.1]], atol=1e-15)
    assert not is_coherent(three, [[2.0, 1.2, 0.9]])
    assert is_coherent(three, [[2.1, 1.2, 0.9]])


def test_panel_binding(three):
    P = PanelMatrix([[3.0, 1.0, 2.0]], ("Total", "A", "B"))
    assert is_coherent(three, P)
    swapped = PanelMatrix([[2.0, 3.0, 1.0]], ("B", "Total", "A"))
    with pytest.raises(HierarchyError):
        coherency_residual(three, swapped)
    np.testing.assert_array_equal(swapped.reorder(three).values, P.values)
    with pytest.raises(HierarchyError, match="missing"):
        PanelMatrix([[1.0, 2.0]], ("Total", "A")).reorder(three)
    with pytest.raises(HierarchyError):
        coherency_residual(three, np.ones((2, 4)))


def test_panel_rejects_nan():
    with pytest.raises(HierarchyError):
        PanelMatrix([[1.0, np.nan]], ("a", "b"))


def test_from_constraints_grouped():
    # two cross-cutting totals over the same four series
    C = np.array([[1, 1, 1, 1], [1, 1, 0, 0], [0, 0, 1, 1], [1, 0, 1, 0], [0, 1, 0, 1]], float)
    h = Hierarchy.from_constraints(C)
    assert h.m == 9 and h.n == 4
    assert np.all(h.S_perp.T @ h.S == 0)
