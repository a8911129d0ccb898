"""Aggregation structure of a hierarchical time series.

A :class:`Hierarchy` holds the summing matrix ``S = [C; I_n]``, the constraint
matrix ``C`` and the basis ``S_perp = [I_{m-n}; -C']`` of the orthogonal
complement of ``range(S)``, so that ``S_perp' y = 0`` for every coherent vector.
Nodes are ordered aggregates first (breadth-first from the roots), then leaves in
input order.
"""

from collections import OrderedDict, deque
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-8


class HierarchyError(ValueError):
    """Invalid hierarchy definition or column binding."""


@dataclass(frozen=True)
class Hierarchy:
    nodes: tuple
    parent_of: dict
    bottom_indices: tuple
    level_of: dict
    S: np.ndarray
    C: np.ndarray
    S_perp: np.ndarray
    index: dict = field(repr=False, compare=False)

    @property
    def m(self):
        return len(self.nodes)

    @property
    def n(self):
        return len(self.bottom_indices)

    @property
    def n_aggregates(self):
        return self.m - self.n

    @property
    def J(self):
        """Bottom-row selector ``[0  I_n]`` (n x m)."""
        return np.hstack([np.zeros((self.n, self.n_aggregates)), np.eye(self.n)])

    @property
    def bottom_nodes(self):
        return self.nodes[self.n_aggregates:]

    def levels(self):
        """Ordered mapping ``level label -> node indices``; labels are tree depths."""
        out = OrderedDict()
        for depth in sorted(set(self.level_of.values())):
            out[depth] = [i for i, node in enumerate(self.nodes) if self.level_of[node] == depth]
        return out

    def edges(self):
        """``(parent, child)`` pairs, roots paired with ``None``, in node order."""
        return [(self.parent_of.get(node), node) for node in self.nodes]

    def aggregate(self, bottom):
        """Map bottom-level rows (``... x n``) to full coherent rows (``... x m``)."""
        return np.asarray(bottom, dtype=float) @ self.S.T

    @classmethod
    def from_constraints(cls, C, names=None):
        """Build a hierarchy from an arbitrary ``(m-n) x n`` constraint matrix.

        The result has no tree metadata: every aggregate is at level 0 and every
        bottom series at level 1.
        """
        C = np.atleast_2d(np.asarray(C, dtype=float))
        n_agg, n = C.shape
        if names is None:
            names = [f"a{i}" for i in range(n_agg)] + [f"b{j}" for j in range(n)]
        if len(names) != n_agg + n or len(set(names)) != len(names):
            raise HierarchyError("names must be unique and match the constraint dimensions")
        level_of = {name: (0 if i < n_agg else 1) for i, name in enumerate(names)}
        return _assemble(tuple(names), {}, level_of, C)


def _assemble(nodes, parent_of, level_of, C):
    n_agg, n = C.shape
    S = np.vstack([C, np.eye(n)])
    S_perp = np.vstack([np.eye(n_agg), -C.T])
    for arr in (S, C, S_perp):
        arr.setflags(write=False)
    return Hierarchy(
        nodes=nodes,
        parent_of=dict(parent_of),
        bottom_indices=tuple(range(n_agg, n_agg + n)),
        level_of=dict(level_of),
        S=S,
        C=C,
        S_perp=S_perp,
        index={node: i for i, node in enumerate(nodes)},
    )


def build_hierarchy(edges):
    """Build a tree hierarchy from ``(parent, child)`` pairs.

    A pair with ``parent`` ``None`` (or ``""``) declares a root, which is how a
    single-node hierarchy is written.  ``S[i, j] = 1`` iff bottom node ``j`` is
    node ``i`` or one of its descendants.

    Raises
    ------
    HierarchyError
        On empty input, a child with more than one parent, a self-loop or cycle.
    """
    edges = list(edges)
    if not edges:
        raise HierarchyError("empty hierarchy: no edges given")
    seen = OrderedDict()
    parent_of = {}
    children = {}
    declared = set()
    for parent, child in edges:
        parent = None if parent in (None, "") else parent
        if child in (None, ""):
            raise HierarchyError("edge with empty child identifier")
        if parent is not None and parent == child:
            raise HierarchyError(f"cycle detected: {child!r} is its own parent")
        if child in declared:
            raise HierarchyError(f"duplicate node {child!r}: listed more than once")
        declared.add(child)
        if parent is not None:
            parent_of[child] = parent
            children.setdefault(parent, []).append(child)
            seen.setdefault(parent, None)
        seen.setdefault(child, None)

    order = list(seen)
    roots = [node for node in order if node not in parent_of]
    if not roots:
        raise HierarchyError("cycle detected: every node has a parent")

    depth = {}
    bfs = []
    queue = deque(roots)
    for r in roots:
        depth[r] = 0
    while queue:
        node = queue.popleft()
        bfs.append(node)
        for child in children.get(node, ()):
            depth[child] = depth[node] + 1
            queue.append(child)
    if len(bfs) != len(order):
        stuck = [node for node in order if node not in depth]
        raise HierarchyError(f"cycle detected among nodes {stuck}")

    aggregates = [node for node in bfs if node in children]
    leaves = [node for node in order if node not in children]
    nodes = tuple(aggregates + leaves)
    leaf_pos = {leaf: j for j, leaf in enumerate(leaves)}

    C = np.zeros((len(aggregates), len(leaves)))
    for i, agg in enumerate(aggregates):
        stack = list(children[agg])
        while stack:
            node = stack.pop()
            if node in leaf_pos:
                C[i, leaf_pos[node]] = 1.0
            else:
                stack.extend(children[node])
    return _assemble(nodes, parent_of, depth, C)


@dataclass(frozen=True, eq=False)
class PanelMatrix:
    """A ``T x k`` block of observations or forecasts bound to hierarchy nodes."""

    values: np.ndarray
    column_nodes: tuple
    time_index: tuple = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise HierarchyError("panel values must be a 2-d array")
        if values.shape[1] != len(self.column_nodes):
            raise HierarchyError(
                f"{values.shape[1]} columns but {len(self.column_nodes)} node bindings"
            )
        if not np.all(np.isfinite(values)):
            raise HierarchyError("panel contains missing or non-finite values")
        time_index = self.time_index
        if time_index is None:
            time_index = tuple(range(values.shape[0]))
        if len(time_index) != values.shape[0]:
            raise HierarchyError("time index length does not match the number of rows")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_nodes", tuple(self.column_nodes))
        object.__setattr__(self, "time_index", tuple(time_index))

    def __eq__(self, other):
        if not isinstance(other, PanelMatrix):
            return NotImplemented
        return (
            self.column_nodes == other.column_nodes
            and self.time_index == other.time_index
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    @classmethod
    def for_hierarchy(cls, h, values, time_index=None):
        return cls(values, h.nodes, time_index)

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return self.values.shape[0]

    def reorder(self, h):
        """Return the panel with columns permuted into ``h.nodes`` order."""
        missing = [node for node in h.nodes if node not in self.column_nodes]
        if missing:
            raise HierarchyError(f"panel is missing node columns: {missing}")
        extra = [node for node in self.column_nodes if node not in h.index]
        if extra:
            raise HierarchyError(f"panel has columns for unknown nodes: {extra}")
        pos = {node: i for i, node in enumerate(self.column_nodes)}
        perm = [pos[node] for node in h.nodes]
        return PanelMatrix(self.values[:, perm], h.nodes, self.time_index)


def _bound_values(h, P):
    if isinstance(P, PanelMatrix):
        if P.column_nodes != h.nodes:
            raise HierarchyError("panel columns are not bound to the hierarchy node order")
        return P.values
    values = np.asarray(P, dtype=float)
    if values.shape[-1] != h.m:
        raise HierarchyError(f"expected {h.m} columns, got {values.shape[-1]}")
    return values


def coherency_residual(h, P):
    """Rows of ``P S_perp``: the aggregation-constraint violations of each row."""
    return _bound_values(h, P) @ h.S_perp


def max_coherency_violation(h, P):
    """Largest ``|S_perp' y|`` divided by ``max(1, max|y|)`` over all rows."""
    values = _bound_values(h, P)
    if h.n_aggregates == 0:
        return 0.0
    resid = np.max(np.abs(values @ h.S_perp), initial=0.0)
    return float(resid / max(1.0, float(np.max(np.abs(values), initial=0.0))))


def is_coherent(h, P, tol=DEFAULT_TOL):
    return max_coherency_violation(h, P) <= tol
