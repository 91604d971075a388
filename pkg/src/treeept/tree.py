"""Rooted weighted trees, the tree metric and node-supported measures.

A tree is stored as flat numpy arrays (parent links, edge lengths, root
distances) so that subtree aggregation reduces to a handful of vectorised
scatter-adds, one per depth level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "TreeError",
    "RootedTree",
    "TreeMeasure",
    "build_tree",
    "tree_distance",
    "subtree_cumulative_masses",
    "measures_equal_by_subtrees",
]

MASS_RTOL = 1e-12


class TreeError(ValueError):
    """Invalid tree structure, node id or measure."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RootedTree:
    """Immutable rooted tree with nonnegative edge lengths.

    Use :func:`build_tree` to construct one; it validates the parent links and
    precomputes everything below.

    Attributes
    ----------
    parent : int64 array, shape (n,)
        Parent id of every node, ``-1`` at the root.
    edge_length : float64 array, shape (n,)
        Length of the edge to the parent (``0`` at the root).
    depth_to_root : float64 array, shape (n,)
        Path length from the root to each node.
    level : int64 array, shape (n,)
        Number of edges between the root and each node.
    order : int64 array, shape (n,)
        Breadth-first order; parents always precede their children.
    children : tuple of tuples
        Child ids for each node.
    node_embedding : float64 array, shape (n, d), optional
        Coordinates of node representatives when sampled from a point cloud.
    """

    parent: np.ndarray
    edge_length: np.ndarray
    depth_to_root: np.ndarray
    level: np.ndarray
    order: np.ndarray
    children: tuple
    root: int
    node_embedding: Optional[np.ndarray] = None
    _levels: tuple = field(default=(), repr=False)

    @property
    def node_count(self) -> int:
        return int(self.parent.shape[0])

    @property
    def max_depth(self) -> float:
        """L_T: largest root-to-node path length."""
        return float(self.depth_to_root.max())

    @property
    def height(self) -> int:
        """Largest number of edges on a root-to-node path."""
        return int(self.level.max())

    def levels(self) -> tuple:
        """Node-id arrays grouped by level, root level first."""
        return self._levels

    def check_node(self, x: int) -> int:
        if isinstance(x, (bool, np.bool_)) or not isinstance(x, (int, np.integer)):
            raise TreeError(f"node id must be an integer, got {x!r}")
        if not 0 <= x < self.node_count:
            raise TreeError(f"node id {x} out of range [0, {self.node_count})")
        return int(x)

    def lca(self, x: int, y: int) -> int:
        x, y = self.check_node(x), self.check_node(y)
        level, parent = self.level, self.parent
        while level[x] > level[y]:
            x = int(parent[x])
        while level[y] > level[x]:
            y = int(parent[y])
        while x != y:
            x, y = int(parent[x]), int(parent[y])
        return x

    def distance(self, x: int, y: int) -> float:
        return tree_distance(self, x, y)

    def distances_from(self, x: int) -> np.ndarray:
        """Tree distance from node ``x`` to every node."""
        x = self.check_node(x)
        on_path = np.zeros(self.node_count, dtype=bool)
        v = x
        while v >= 0:
            on_path[v] = True
            v = int(self.parent[v])
        # lca(x, y) is the deepest root-path node of x above y
        meet = np.empty(self.node_count, dtype=np.int64)
        meet[self.root] = self.root
        for nodes in self._levels[1:]:
            meet[nodes] = np.where(on_path[nodes], nodes, meet[self.parent[nodes]])
        d = self.depth_to_root
        return np.maximum(d[x] + d - 2.0 * d[meet], 0.0)

    def distance_matrix(self, xs: Sequence[int], ys: Sequence[int]) -> np.ndarray:
        """Pairwise tree distances between two node lists."""
        ys = np.asarray(ys, dtype=np.int64)
        out = np.empty((len(xs), ys.size))
        for i, x in enumerate(xs):
            out[i] = self.distances_from(int(x))[ys]
        return out

    def to_dict(self) -> dict:
        d = {
            "parents": [None if p < 0 else int(p) for p in self.parent],
            "edge_lengths": [float(w) for w in self.edge_length],
        }
        if self.node_embedding is not None:
            d["embedding"] = [[float(v) for v in row] for row in self.node_embedding]
        return d


def build_tree(
    parents: Sequence[Optional[int]],
    edge_lengths: Sequence[float],
    embedding: Optional[Sequence[Sequence[float]]] = None,
) -> RootedTree:
    """Validate parent links and edge lengths and build a :class:`RootedTree`.

    Parameters
    ----------
    parents : sequence of int or None
        ``parents[v]`` is the parent of node ``v``; exactly one entry (the
        root) is ``None``.
    edge_lengths : sequence of float
        Length of the edge from each node to its parent. The root entry is
        ignored and stored as ``0``.
    embedding : optional (n, d) array-like
        Node coordinates, kept for reference only.

    Raises
    ------
    TreeError
        On multiple or missing roots, dangling parent ids, cycles, negative or
        non-finite lengths, or misaligned inputs.
    """
    n = len(parents)
    if n == 0:
        raise TreeError("tree must have at least one node")
    if len(edge_lengths) != n:
        raise TreeError(
            f"edge_lengths has {len(edge_lengths)} entries for {n} parents"
        )
    roots = [v for v, p in enumerate(parents) if p is None]
    if len(roots) != 1:
        raise TreeError(f"expected exactly one root, found {len(roots)}")
    root = roots[0]

    parent = np.full(n, -1, dtype=np.int64)
    children: list[list[int]] = [[] for _ in range(n)]
    for v, p in enumerate(parents):
        if p is None:
            continue
        if isinstance(p, bool) or int(p) != p or not 0 <= int(p) < n:
            raise TreeError(f"node {v} has dangling parent id {p!r}")
        if int(p) == v:
            raise TreeError(f"node {v} is its own parent")
        parent[v] = int(p)
        children[int(p)].append(v)

    lengths = np.asarray(edge_lengths, dtype=np.float64).copy()
    lengths[root] = 0.0
    if not np.all(np.isfinite(lengths)):
        raise TreeError("edge lengths must be finite")
    if np.any(lengths < 0):
        bad = int(np.flatnonzero(lengths < 0)[0])
        raise TreeError(f"negative edge length {lengths[bad]} at node {bad}")

    order = [root]
    level = np.zeros(n, dtype=np.int64)
    depth = np.zeros(n)
    head = 0
    while head < len(order):
        u = order[head]
        head += 1
        for c in children[u]:
            level[c] = level[u] + 1
            depth[c] = depth[u] + lengths[c]
            order.append(c)
    if len(order) != n:
        # everything unreachable from the root sits on a parent cycle
        raise TreeError(f"cycle detected: {n - len(order)} nodes unreachable from root")

    levels = [[] for _ in range(int(level.max()) + 1)]
    for v in order:
        levels[level[v]].append(v)

    emb = None
    if embedding is not None:
        emb = np.asarray(embedding, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != n:
            raise TreeError(f"embedding must have shape ({n}, d), got {emb.shape}")
        emb = _readonly(emb.copy())

    return RootedTree(
        parent=_readonly(parent),
        edge_length=_readonly(lengths),
        depth_to_root=_readonly(depth),
        level=_readonly(level),
        order=_readonly(np.asarray(order, dtype=np.int64)),
        children=tuple(tuple(c) for c in children),
        root=root,
        node_embedding=emb,
        _levels=tuple(_readonly(np.asarray(lv, dtype=np.int64)) for lv in levels),
    )


def tree_distance(t: RootedTree, x: int, y: int) -> float:
    """Length of the unique path between nodes ``x`` and ``y``."""
    a = t.lca(x, y)
    d = t.depth_to_root
    return float(max(d[x] + d[y] - 2.0 * d[a], 0.0))


@dataclass(frozen=True, eq=False)
class TreeMeasure:
    """Nonnegative masses on tree nodes, stored sparsely.

    ``nodes`` is sorted and holds only strictly positive masses. Build with
    :meth:`from_mapping`, :meth:`from_dense` or :meth:`from_arrays`.
    """

    nodes: np.ndarray
    masses: np.ndarray
    total: float

    @classmethod
    def from_arrays(cls, nodes, masses) -> "TreeMeasure":
        nodes = np.asarray(nodes, dtype=np.int64).ravel()
        masses = np.asarray(masses, dtype=np.float64).ravel()
        if nodes.shape != masses.shape:
            raise TreeError("nodes and masses must have equal length")
        if not np.all(np.isfinite(masses)):
            raise TreeError("masses must be finite")
        if np.any(masses < 0):
            raise TreeError("masses must be nonnegative")
        if np.any(nodes < 0):
            raise TreeError("node ids must be nonnegative")
        if nodes.size:
            uniq, inv = np.unique(nodes, return_inverse=True)
            summed = np.zeros(uniq.size)
            np.add.at(summed, inv, masses)
            keep = summed > 0
            nodes, masses = uniq[keep], summed[keep]
        return cls(_readonly(nodes), _readonly(masses), float(masses.sum()))

    @classmethod
    def from_mapping(cls, masses: Mapping[int, float]) -> "TreeMeasure":
        keys = list(masses)
        return cls.from_arrays(keys, [masses[k] for k in keys])

    @classmethod
    def from_dense(cls, vector) -> "TreeMeasure":
        v = np.asarray(vector, dtype=np.float64).ravel()
        idx = np.flatnonzero(v)
        return cls.from_arrays(idx, v[idx])

    @classmethod
    def empty(cls) -> "TreeMeasure":
        return cls.from_arrays([], [])

    def __len__(self) -> int:
        return int(self.nodes.size)

    def as_dict(self) -> dict:
        return {int(k): float(v) for k, v in zip(self.nodes, self.masses)}

    def dense(self, n: int) -> np.ndarray:
        if self.nodes.size and self.nodes[-1] >= n:
            raise TreeError(f"measure references node {self.nodes[-1]} outside tree of {n} nodes")
        out = np.zeros(n)
        out[self.nodes] = self.masses
        return out

    def check_on(self, t: RootedTree) -> None:
        if self.nodes.size and self.nodes[-1] >= t.node_count:
            raise TreeError(
                f"measure references unknown node {int(self.nodes[-1])} "
                f"(tree has {t.node_count} nodes)"
            )

    def __add__(self, other: "TreeMeasure") -> "TreeMeasure":
        return TreeMeasure.from_arrays(
            np.concatenate([self.nodes, other.nodes]),
            np.concatenate([self.masses, other.masses]),
        )

    def scale(self, c: float) -> "TreeMeasure":
        if c < 0:
            raise TreeError("scale factor must be nonnegative")
        return TreeMeasure.from_arrays(self.nodes, self.masses * c)


def cumulative_dense(t: RootedTree, masses: np.ndarray) -> np.ndarray:
    """Subtree sums for dense mass arrays of shape (n,) or (n, k)."""
    cum = np.array(masses, dtype=np.float64, copy=True)
    parent = t.parent
    for nodes in reversed(t.levels()[1:]):
        np.add.at(cum, parent[nodes], cum[nodes])
    return cum


def subtree_cumulative_masses(t: RootedTree, m: TreeMeasure) -> np.ndarray:
    """Mass of the subtree below every node: ``out[x] = m(Λ(x))``."""
    m.check_on(t)
    return cumulative_dense(t, m.dense(t.node_count))


def measures_equal_by_subtrees(
    t: RootedTree, m1: TreeMeasure, m2: TreeMeasure, tol: float = MASS_RTOL
) -> bool:
    """Compare two measures through their subtree masses.

    For node-supported measures, equal subtree masses at every node is
    equivalent to equal measures. ``tol`` is relative to the larger total.
    """
    c1 = subtree_cumulative_masses(t, m1)
    c2 = subtree_cumulative_masses(t, m2)
    scale = max(1.0, m1.total, m2.total)
    return bool(np.all(np.abs(c1 - c2) <= tol * scale))

