"""Undirected trees, rooted trees and the structural queries the solvers need.

Nodes are dense 1-based integer labels ``1..J``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .errors import (
    CycleDetected,
    Disconnected,
    DuplicateEdge,
    RootNotLeaf,
    UnknownNode,
)

Edge = tuple[int, int]


@dataclass(frozen=True)
class Tree:
    """An undirected tree on nodes ``1..node_count``.

    Build instances with :func:`validate_tree`; the constructor does not check
    tree-ness on its own.
    """

    node_count: int
    edges: tuple[Edge, ...]
    _adj: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        adj: dict[int, list[int]] = {j: [] for j in range(1, self.node_count + 1)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        object.__setattr__(self, "_adj", {j: tuple(sorted(v)) for j, v in adj.items()})

    @property
    def nodes(self) -> range:
        return range(1, self.node_count + 1)

    def check_node(self, j: int) -> None:
        if j not in self._adj:
            raise UnknownNode(f"node {j!r} is not in 1..{self.node_count}")

    def neighbors(self, j: int) -> tuple[int, ...]:
        self.check_node(j)
        return self._adj[j]

    def degree(self, j: int) -> int:
        return len(self.neighbors(j))

    def has_edge(self, a: int, b: int) -> bool:
        return b in self._adj.get(a, ())

    def directed_edges(self) -> list[Edge]:
        """Both orientations of every edge, sorted."""
        return sorted([(a, b) for a, b in self.edges] + [(b, a) for a, b in self.edges])

    def leaves(self) -> list[int]:
        return leaves(self)

    def path(self, a: int, b: int) -> list[int]:
        return path_between(self, a, b)


@dataclass(frozen=True)
class RootedTree:
    """A tree oriented away from a leaf ``root``.

    ``order`` lists nodes in breadth-first order from the root, so every
    parent precedes its children.
    """

    base: Tree
    root: int
    parent: dict[int, int]
    children: dict[int, tuple[int, ...]]
    order: tuple[int, ...]

    @property
    def edges(self) -> list[Edge]:
        """Directed edges ``(parent, child)`` in breadth-first order."""
        return [(self.parent[j], j) for j in self.order if j != self.root]

    def ancestors(self, j: int) -> list[int]:
        """Nodes strictly above ``j``, nearest first."""
        out = []
        while j != self.root:
            j = self.parent[j]
            out.append(j)
        return out

    def subtree(self, j: int) -> set[int]:
        out, stack = set(), [j]
        while stack:
            k = stack.pop()
            out.add(k)
            stack.extend(self.children[k])
        return out


def _canonical(a: int, b: int) -> Edge:
    return (a, b) if a < b else (b, a)


def validate_tree(node_count: int, edge_list: Iterable[Edge]) -> Tree:
    """Check that ``edge_list`` forms a tree on ``1..node_count`` and build it.

    Edges keep the orientation they were given in; orientation only matters
    to callers that attach matrices to edges.
    """
    if node_count < 1:
        raise Disconnected("a tree needs at least one node")
    edges = [tuple(int(x) for x in e) for e in edge_list]
    seen: set[Edge] = set()
    parent = list(range(node_count + 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in edges:
        if len(e) != 2:
            raise DuplicateEdge(f"edge {e!r} must have exactly two endpoints")
        a, b = e
        for j in (a, b):
            if not 1 <= j <= node_count:
                raise UnknownNode(f"edge {e!r} references node {j} outside 1..{node_count}")
        if a == b:
            raise CycleDetected(f"self-loop at node {a}")
        key = _canonical(a, b)
        if key in seen:
            raise DuplicateEdge(f"edge {key} appears more than once")
        seen.add(key)
        ra, rb = find(a), find(b)
        if ra == rb:
            raise CycleDetected(f"edge {e!r} closes a cycle")
        parent[ra] = rb

    roots = {find(j) for j in range(1, node_count + 1)}
    if len(roots) > 1:
        raise Disconnected(f"graph has {len(roots)} connected components")
    return Tree(node_count, tuple(edges))


def leaves(tree: Tree) -> list[int]:
    """Degree-one nodes in ascending order. A single-node tree is its own leaf."""
    if tree.node_count == 1:
        return [1]
    return [j for j in tree.nodes if tree.degree(j) == 1]


def _bfs_parents(tree: Tree, source: int) -> tuple[dict[int, int], list[int]]:
    tree.check_node(source)
    parent = {source: source}
    order = [source]
    queue = deque([source])
    while queue:
        j = queue.popleft()
        for k in tree.neighbors(j):
            if k not in parent:
                parent[k] = j
                order.append(k)
                queue.append(k)
    return parent, order


def path_between(tree: Tree, j1: int, j2: int) -> list[int]:
    """The unique simple path ``[j1, ..., j2]``."""
    tree.check_node(j2)
    parent, _ = _bfs_parents(tree, j2)
    path = [j1]
    while path[-1] != j2:
        path.append(parent[path[-1]])
    return path


def root_at(tree: Tree, r: int) -> RootedTree:
    tree.check_node(r)
    if r not in leaves(tree):
        raise RootNotLeaf(f"node {r} has degree {tree.degree(r)}; the root must be a leaf")
    parent, order = _bfs_parents(tree, r)
    del parent[r]
    children: dict[int, list[int]] = {j: [] for j in tree.nodes}
    for j in order[1:]:
        children[parent[j]].append(j)
    return RootedTree(
        base=tree,
        root=r,
        parent=parent,
        children={j: tuple(sorted(c)) for j, c in children.items()},
        order=tuple(order),
    )


def euler_tour(tree: Tree, start: int) -> list[int]:
    """Depth-first Euler tour from ``start``, visiting neighbours by label."""
    tree.check_node(start)
    tour = [start]
    stack = [(start, iter(tree.neighbors(start)))]
    visited = {start}
    while stack:
        _, it = stack[-1]
        for k in it:
            if k not in visited:
                visited.add(k)
                tour.append(k)
                stack.append((k, iter(tree.neighbors(k))))
                break
        else:
            stack.pop()
            if stack:
                tour.append(stack[-1][0])
    return tour


def leaf_schedule(tree: Tree, only: Iterable[int] | None = None) -> list[int]:
    """Leaves ordered by first appearance in a DFS Euler tour.

    The tour starts at the lowest-numbered leaf. ``only`` restricts the output
    to a subset of leaves while keeping the tour order.
    """
    lv = leaves(tree)
    keep = set(lv) if only is None else set(only) & set(lv)
    tour = euler_tour(tree, lv[0])
    out, seen = [], set()
    for j in tour:
        if j in keep and j not in seen:
            seen.add(j)
            out.append(j)
    return out


def diameter(tree: Tree) -> int:
    """Number of edges on the longest path."""
    _, order = _bfs_parents(tree, 1)
    far = order[-1]
    parent, order = _bfs_parents(tree, far)
    j, length = order[-1], 0
    while j != far:
        j = parent[j]
        length += 1
    return length


def components_without(tree: Tree, cut: int) -> list[list[int]]:
    """Connected components of the tree after deleting node ``cut``.

    Each component is returned sorted; components are ordered by their
    smallest label.
    """
    tree.check_node(cut)
    comps = []
    for start in tree.neighbors(cut):
        comp, stack = {start}, [start]
        while stack:
            j = stack.pop()
            for k in tree.neighbors(j):
                if k != cut and k not in comp:
                    comp.add(k)
                    stack.append(k)
        comps.append(sorted(comp))
    return sorted(comps)
