"""Rooted weighted trees and the shortest-path tree metric.

Nodes are dense integer ids ``0..L-1``. The weight of an edge is stored on
its deeper endpoint, so ``edge_weight[v]`` is the length of the edge from
``v`` to ``parent[v]`` and the root carries weight 0.

Every subtree occupies a contiguous block of the pre-order, which is what
makes subtree aggregation and root-path accumulation single prefix-sum
passes over the nodes.
"""

from functools import cached_property
import os

import numpy as np

from ._validation import as_float_array, check_length
from .exceptions import (
    CycleError,
    DisconnectedError,
    DuplicateEdgeError,
    InvalidNodeError,
    MultipleParentsError,
    NegativeWeightError,
)

NO_PARENT = -1


class NodeSet:
    """A set of node ids stored as a boolean membership mask."""

    __slots__ = ("mask",)

    def __init__(self, mask):
        self.mask = np.asarray(mask, dtype=bool)

    def __contains__(self, v):
        return 0 <= v < self.mask.size and bool(self.mask[v])

    def __iter__(self):
        return iter(np.flatnonzero(self.mask).tolist())

    def __len__(self):
        return int(self.mask.sum())

    def __eq__(self, other):
        if isinstance(other, NodeSet):
            return np.array_equal(self.mask, other.mask)
        try:
            return set(self) == set(other)
        except TypeError:
            return NotImplemented

    def __repr__(self):
        return f"NodeSet({sorted(self)})"


class RootedTree:
    """Immutable rooted tree with nonnegative edge weights.

    Use :func:`build_tree` (edge list) or :meth:`from_parents` to construct
    one; both validate the structure.

    Attributes
    ----------
    node_count : int
    root : int
    parent : ndarray of int, shape (L,)
        ``parent[root] == -1``.
    edge_weight : ndarray of float, shape (L,)
        ``edge_weight[root] == 0``.
    preorder : ndarray of int
        Depth-first pre-order, children visited in increasing id order.
    traversal_order : ndarray of int
        Reverse of ``preorder``; every child precedes its parent.
    labels : tuple of str or None
        Optional side table mapping ids to names.
    """

    def __init__(self, parent, edge_weight, root, preorder, labels=None):
        # Trusted constructor; public entry points validate first.
        self.parent = _frozen(np.asarray(parent, dtype=np.int64))
        self.edge_weight = _frozen(np.asarray(edge_weight, dtype=np.float64))
        self.root = int(root)
        self.node_count = self.parent.size
        self.preorder = _frozen(np.asarray(preorder, dtype=np.int64))
        self.traversal_order = _frozen(self.preorder[::-1].copy())
        self.labels = tuple(labels) if labels is not None else None

        L = self.node_count
        tin = np.empty(L, dtype=np.int64)
        tin[self.preorder] = np.arange(L)
        size = np.ones(L, dtype=np.int64)
        par = self.parent.tolist()
        for v in self.traversal_order.tolist():
            p = par[v]
            if p != NO_PARENT:
                size[p] += size[v]
        self.tin = _frozen(tin)
        self.tout = _frozen(tin + size)
        self.depth = _frozen(self.root_path_sums(self.edge_weight))

    @classmethod
    def from_parents(cls, parent, edge_weight=None, labels=None):
        """Build from a parent array (root marked with ``-1``)."""
        parent = np.asarray(parent, dtype=np.int64)
        if parent.ndim != 1 or parent.size == 0:
            raise ValueError("parent must be a non-empty 1-D array")
        L = parent.size
        if edge_weight is None:
            edge_weight = np.ones(L)
        edge_weight = np.asarray(edge_weight, dtype=np.float64).copy()
        if edge_weight.shape != (L,):
            raise ValueError("edge_weight must have one entry per node")
        roots = np.flatnonzero(parent == NO_PARENT)
        if roots.size != 1:
            raise DisconnectedError(f"expected exactly one root, found {roots.size}")
        root = int(roots[0])
        if np.any((parent < NO_PARENT) | (parent >= L)):
            raise InvalidNodeError("parent ids out of range")
        nonroot = parent != NO_PARENT
        if np.any(parent[nonroot] == np.flatnonzero(nonroot)):
            raise CycleError("a node is its own parent")
        weights = edge_weight[nonroot]
        if np.any(~np.isfinite(weights)):
            raise ValueError("edge weights must be finite")
        if np.any(weights < 0):
            raise NegativeWeightError("edge weights must be nonnegative")
        edge_weight[root] = 0.0
        preorder = _preorder(parent, root)
        if preorder.size != L:
            _raise_unreachable(parent, root, preorder)
        if labels is not None and len(labels) != L:
            raise ValueError("labels must have one entry per node")
        return cls(parent, edge_weight, root, preorder, labels)

    # -- structure ----------------------------------------------------------

    def __len__(self):
        return self.node_count

    def __repr__(self):
        return f"RootedTree(node_count={self.node_count}, root={self.root})"

    def __eq__(self, other):
        if not isinstance(other, RootedTree):
            return NotImplemented
        return (
            self.root == other.root
            and np.array_equal(self.parent, other.parent)
            and np.array_equal(self.edge_weight, other.edge_weight)
        )

    __hash__ = None

    def edges(self):
        """List of ``(parent, child, weight)`` ordered by child id."""
        return [
            (int(self.parent[v]), int(v), float(self.edge_weight[v]))
            for v in range(self.node_count)
            if v != self.root
        ]

    @cached_property
    def children(self):
        kids = [[] for _ in range(self.node_count)]
        for v, p in enumerate(self.parent.tolist()):
            if p != NO_PARENT:
                kids[p].append(v)
        return tuple(tuple(k) for k in kids)

    def node_id(self, label):
        """Id of the node named ``label`` in the side table."""
        if self.labels is None:
            raise KeyError("tree has no labels")
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(label) from None

    def check_node(self, v):
        if not (0 <= int(v) < self.node_count) or int(v) != v:
            raise InvalidNodeError(f"node {v!r} not in 0..{self.node_count - 1}")
        return int(v)

    def subtree_nodes(self, v):
        """Nodes whose path to the root passes through ``v`` (``v`` included)."""
        v = self.check_node(v)
        mask = np.zeros(self.node_count, dtype=bool)
        mask[self.preorder[self.tin[v]:self.tout[v]]] = True
        return NodeSet(mask)

    def root_path(self, v):
        """Nodes on the path from ``v`` up to the root, both included."""
        v = self.check_node(v)
        mask = np.zeros(self.node_count, dtype=bool)
        while v != NO_PARENT:
            mask[v] = True
            v = int(self.parent[v])
        return NodeSet(mask)

    # -- linear-time passes -------------------------------------------------

    def subtree_masses(self, mu):
        """Total mass of ``mu`` inside every subtree.

        ``mu`` may carry leading batch axes; the last axis indexes nodes.
        One cumulative sum over the pre-order, O(L) time and memory per row.
        """
        mu = check_length(as_float_array(mu, "mu"), self.node_count, "mu")
        pre = mu[..., self.preorder]
        csum = np.zeros(mu.shape[:-1] + (self.node_count + 1,))
        np.cumsum(pre, axis=-1, out=csum[..., 1:])
        return csum[..., self.tout] - csum[..., self.tin]

    def root_path_sums(self, values):
        """``out[u] = sum of values[v] over v on the root path of u``.

        The adjoint of :meth:`subtree_masses`; also O(L).
        """
        values = check_length(as_float_array(values, "values"), self.node_count, "values")
        L = self.node_count
        if values.ndim == 1:
            # range-add values[v] over the pre-order block [tin[v], tout[v])
            diff = np.bincount(self.tin, values, L + 1) - np.bincount(self.tout, values, L + 1)
            return np.cumsum(diff[:L])[self.tin]
        vt = np.moveaxis(values, -1, 0)
        diff = np.zeros((L + 1,) + vt.shape[1:])
        diff[self.tin] = vt
        np.subtract.at(diff, self.tout, vt)
        acc = np.cumsum(diff[:L], axis=0)
        return np.moveaxis(acc[self.tin], 0, -1)

    # -- metric -------------------------------------------------------------

    @cached_property
    def _distance_matrix(self):
        L = self.node_count
        lca_depth_pos = np.empty((L, L))
        depth = self.depth
        for v in self.preorder.tolist():
            p = int(self.parent[v])
            row = lca_depth_pos[v]
            if p == NO_PARENT:
                row[:] = depth[v]
            else:
                row[:] = lca_depth_pos[p]
            row[self.tin[v]:self.tout[v]] = depth[v]
        lca_depth = lca_depth_pos[:, self.tin]
        dist = depth[:, None] + depth[None, :] - 2.0 * lca_depth
        # clamp rounding noise; the diagonal is exactly zero by construction
        np.maximum(dist, 0.0, out=dist)
        return _frozen(dist)

    def distance_matrix(self):
        """Dense ``L x L`` shortest-path distances (cached, read-only)."""
        return self._distance_matrix

    def distances_from(self, v):
        """Distances from ``v`` to every node without building the matrix."""
        v = self.check_node(v)
        path = []
        u = v
        while u != NO_PARENT:
            path.append(u)
            u = int(self.parent[u])
        lca_depth_pos = np.zeros(self.node_count)
        for a in reversed(path):
            lca_depth_pos[self.tin[a]:self.tout[a]] = self.depth[a]
        dist = self.depth[v] + self.depth - 2.0 * lca_depth_pos[self.tin]
        return np.maximum(dist, 0.0)

    # -- derived trees ------------------------------------------------------

    def with_unit_weights(self):
        w = np.ones(self.node_count)
        w[self.root] = 0.0
        return RootedTree(self.parent, w, self.root, self.preorder, self.labels)

    def relabel(self, perm):
        """Tree with node ``v`` renamed to ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        if perm.shape != (self.node_count,) or not np.array_equal(
            np.sort(perm), np.arange(self.node_count)
        ):
            raise ValueError("perm must be a permutation of 0..L-1")
        parent = np.empty_like(self.parent)
        weight = np.empty_like(self.edge_weight)
        parent[perm] = np.where(self.parent == NO_PARENT, NO_PARENT, perm[self.parent])
        weight[perm] = self.edge_weight
        return RootedTree.from_parents(parent, weight)


def build_tree(edges, root=0, node_count=None, labels=None):
    """Validate an edge list and return a :class:`RootedTree`.

    Parameters
    ----------
    edges : iterable of (parent, child, weight)
    root : int
    node_count : int, optional
        Defaults to one more than the largest id mentioned.
    labels : sequence of str, optional

    Raises
    ------
    CycleError, DisconnectedError, DuplicateEdgeError, NegativeWeightError,
    MultipleParentsError, InvalidNodeError
    """
    edges = [(int(p), int(c), float(w)) for p, c, w in edges]
    if node_count is None:
        node_count = 1 + max([root] + [max(p, c) for p, c, _ in edges])
    L = int(node_count)
    if L < 1:
        raise ValueError("node_count must be positive")
    if not 0 <= root < L:
        raise InvalidNodeError(f"root {root} not in 0..{L - 1}")

    parent = np.full(L, NO_PARENT, dtype=np.int64)
    weight = np.zeros(L)
    seen = set()
    for p, c, w in edges:
        if not (0 <= p < L and 0 <= c < L):
            raise InvalidNodeError(f"edge ({p}, {c}) references a node outside 0..{L - 1}")
        if p == c:
            raise CycleError(f"self-loop at node {p}")
        key = (min(p, c), max(p, c))
        if key in seen:
            raise DuplicateEdgeError(f"edge between {p} and {c} given more than once")
        seen.add(key)
        if not np.isfinite(w):
            raise ValueError(f"edge ({p}, {c}) has non-finite weight")
        if w < 0:
            raise NegativeWeightError(f"edge ({p}, {c}) has negative weight {w}")
        if c == root:
            raise CycleError(f"root {root} appears as a child of {p}")
        if parent[c] != NO_PARENT:
            raise MultipleParentsError(f"node {c} has parents {parent[c]} and {p}")
        parent[c] = p
        weight[c] = w

    preorder = _preorder(parent, root)
    if preorder.size != L:
        _raise_unreachable(parent, root, preorder)
    if labels is not None and len(labels) != L:
        raise ValueError("labels must have one entry per node")
    return RootedTree(parent, weight, root, preorder, labels)


def attach_root(edges, node_count, weight=1.0, labels=None, root_label="root"):
    """Join a forest into a tree by adding a new root above every forest root.

    The new root gets id ``node_count``; each former root hangs from it by an
    edge of length ``weight``.
    """
    edges = [(int(p), int(c), float(w)) for p, c, w in edges]
    has_parent = np.zeros(node_count, dtype=bool)
    for _, c, _ in edges:
        has_parent[c] = True
    new_root = int(node_count)
    extra = [(new_root, int(r), float(weight)) for r in np.flatnonzero(~has_parent)]
    if labels is not None:
        labels = list(labels) + [root_label]
    return build_tree(edges + extra, root=new_root, node_count=node_count + 1, labels=labels)


def save_tree(tree, path):
    """Write the tab-separated edge-list format (``#root``/``#nodes`` header)."""
    lines = [f"#root {tree.root}", f"#nodes {tree.node_count}"]
    lines += [f"{p}\t{c}\t{w!r}" for p, c, w in tree.edges()]
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_tree(path):
    root = None
    node_count = None
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(" ")
                if key == "root":
                    root = int(value)
                elif key == "nodes":
                    node_count = int(value)
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected parent<TAB>child<TAB>weight")
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if root is None or node_count is None:
        raise ValueError(f"{path}: missing #root or #nodes header")
    return build_tree(edges, root=root, node_count=node_count)


def _frozen(arr):
    arr.setflags(write=False)
    return arr


def _preorder(parent, root):
    L = parent.size
    counts = np.bincount(parent[parent != NO_PARENT], minlength=L)
    ptr = np.concatenate(([0], np.cumsum(counts)))
    kids = np.argsort(np.where(parent == NO_PARENT, L, parent), kind="stable")
    kids = kids[: ptr[-1]].tolist()
    ptr = ptr.tolist()
    order = []
    stack = [root]
    visited = 0
    while stack:
        v = stack.pop()
        order.append(v)
        visited += 1
        if visited > L:
            break
        stack.extend(reversed(kids[ptr[v]:ptr[v + 1]]))
    return np.asarray(order, dtype=np.int64)


def _raise_unreachable(parent, root, reached):
    seen = np.zeros(parent.size, dtype=bool)
    seen[reached] = True
    for start in np.flatnonzero(~seen).tolist():
        trail = set()
        v = start
        while v != NO_PARENT and not seen[v]:
            if v in trail:
                raise CycleError(f"parent links starting at node {start} form a cycle")
            trail.add(v)
            v = int(parent[v])
    first = int(np.flatnonzero(~seen)[0])
    raise DisconnectedError(f"node {first} is not connected to root {root}")
