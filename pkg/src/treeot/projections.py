"""Marginal and pairwise projections of ``K * U`` by message passing.

The joint tensor is never formed. For every directed edge ``(j, k)`` we keep
a message ``alpha[(j, k)]``: the kernel ``K^(j,k)`` applied to everything
hanging off ``k`` on the side away from ``j``. A node's marginal is its own
scaling times the product of its incoming messages.

Messages are cached. Updating the scaling at a leaf marks every message that
flows away from that leaf as dirty; dirty messages are recomputed on demand,
so consecutive leaf updates only pay for the path between the two leaves.

All vectors live in the arithmetic domain of the state (see
:mod:`treeot.numerics`); ``kernels`` must be given in the same domain, keyed
by directed edge with ``kernels[(j, k)]`` of shape ``n_j x n_k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import EqualModes, StaleDependency
from .graph import Tree, path_between, root_at
from .numerics import domain

Edge = tuple[int, int]


@dataclass
class ScalingState:
    """Mutable solver state: scalings, cached messages and the dirty set.

    ``u`` holds scalings only for constrained nodes; every other node has an
    implicit all-ones scaling. ``weights`` are fixed per-node factors (used
    for leaves folded away during preprocessing).
    """

    u: dict[int, np.ndarray]
    alpha: dict[Edge, np.ndarray] = field(default_factory=dict)
    dirty: set[Edge] = field(default_factory=set)
    weights: dict[int, np.ndarray] = field(default_factory=dict)
    log_domain: bool = False
    strict: bool = True

    @classmethod
    def initial(cls, tree: Tree, sizes, constrained, log_domain=False, weights=None, strict=True):
        D = domain(log_domain)
        state = cls(
            u={j: D.ones(sizes[j]) for j in constrained},
            weights=dict(weights or {}),
            log_domain=log_domain,
            strict=strict,
        )
        state.dirty = set(tree.directed_edges())
        return state

    @property
    def ops(self):
        return domain(self.log_domain)

    def factor(self, j: int):
        """Scaling times fixed weight at node ``j``, or ``None`` for all-ones."""
        u, w = self.u.get(j), self.weights.get(j)
        if u is None:
            return w
        return u if w is None else self.ops.mul(u, w)

    def copy(self) -> "ScalingState":
        return ScalingState(
            u={j: v.copy() for j, v in self.u.items()},
            alpha={e: v.copy() for e, v in self.alpha.items()},
            dirty=set(self.dirty),
            weights=dict(self.weights),
            log_domain=self.log_domain,
            strict=self.strict,
        )


def _diag_factor(state, tree, j, exclude):
    """``u_j`` times the messages into ``j`` from neighbours not in ``exclude``.

    Returns ``None`` when the product is empty and the scaling is all-ones.
    """
    D = state.ops
    acc = state.factor(j)
    for l in tree.neighbors(j):
        if l in exclude:
            continue
        if (j, l) in state.dirty:
            raise StaleDependency(f"message ({j}, {l}) is stale")
        acc = state.alpha[(j, l)] if acc is None else D.mul(acc, state.alpha[(j, l)])
    return acc


def recompute_alpha(state: ScalingState, tree: Tree, kernels, edge: Edge) -> ScalingState:
    """Recompute one message from its (clean) upstream messages."""
    j, k = edge
    D = state.ops
    d = _diag_factor(state, tree, k, exclude=(j,))
    K = kernels[(j, k)]
    if d is None:
        msg = D.matvec(K, D.ones(K.shape[1]))
    else:
        msg = D.matvec(K, d)
    D.check(msg, f"message ({j}, {k})", allow_zero=not state.strict)
    state.alpha[edge] = msg
    state.dirty.discard(edge)
    return state


def ensure(state: ScalingState, tree: Tree, kernels, edge: Edge) -> None:
    """Bring ``alpha[edge]`` up to date, refreshing dirty upstream messages first."""
    if edge not in state.dirty:
        return
    stack = [edge]
    while stack:
        j, k = stack[-1]
        if (j, k) not in state.dirty:
            stack.pop()
            continue
        pending = [(k, l) for l in tree.neighbors(k) if l != j and (k, l) in state.dirty]
        if pending:
            stack.extend(pending)
        else:
            recompute_alpha(state, tree, kernels, (j, k))
            stack.pop()


def refresh_toward(state: ScalingState, tree: Tree, kernels, j: int, exclude=()) -> None:
    """Make every message into ``j`` clean."""
    for k in tree.neighbors(j):
        if k not in exclude:
            ensure(state, tree, kernels, (j, k))


def incoming(state: ScalingState, tree: Tree, kernels, j: int):
    """Fixed weight at ``j`` times all incoming messages (excludes ``u_j``)."""
    refresh_toward(state, tree, kernels, j)
    D = state.ops
    acc = state.weights.get(j)
    for k in tree.neighbors(j):
        acc = state.alpha[(j, k)] if acc is None else D.mul(acc, state.alpha[(j, k)])
    return acc


def project_marginal(state: ScalingState, tree: Tree, kernels, j: int, refresh: bool = True) -> np.ndarray:
    """Marginal of ``K * U`` on node ``j``, returned as a plain array.

    With ``refresh=False`` the caller guarantees the incoming messages are
    clean; a stale message raises :class:`StaleDependency`.
    """
    tree.check_node(j)
    if refresh:
        refresh_toward(state, tree, kernels, j)
    d = _diag_factor(state, tree, j, exclude=())
    if d is None:
        d = state.ops.ones(_node_size(tree, kernels, j))
    return state.ops.to_linear(d)


def project_pair(state: ScalingState, tree: Tree, kernels, j1: int, j2: int, refresh: bool = True) -> np.ndarray:
    """Bi-marginal of ``K * U`` on nodes ``(j1, j2)``, rows indexed by ``j1``.

    Walks the path ``j1 .. j2`` alternating diagonal factors (scaling and
    off-path messages) with edge kernels.
    """
    if j1 == j2:
        raise EqualModes(f"nodes must differ, got {j1} twice")
    path = path_between(tree, j1, j2)
    D = state.ops
    if refresh:
        for i, p in enumerate(path):
            on_path = {path[i - 1]} if i > 0 else set()
            if i + 1 < len(path):
                on_path.add(path[i + 1])
            refresh_toward(state, tree, kernels, p, exclude=on_path)
    R = None
    for i, p in enumerate(path):
        on_path = set(path[max(i - 1, 0): i + 2]) - {p}
        d = _diag_factor(state, tree, p, exclude=on_path)
        if R is None:
            K = kernels[(p, path[1])]
            R = K if d is None else D.outer_scale(d, K, D.ones(K.shape[1]))
            continue
        if d is not None:
            R = D.mul(R, d[None, :])
        if i + 1 < len(path):
            R = D.matmul(R, kernels[(p, path[i + 1])])
    return D.to_linear(R)


def _node_size(tree, kernels, j):
    for k in tree.neighbors(j):
        return kernels[(j, k)].shape[0]
    raise ValueError(f"size of isolated node {j} is unknown")


def mark_path_dirty(state: ScalingState, tree: Tree, from_leaf: int, to_leaf: int) -> ScalingState:
    """Mark the messages along ``from_leaf .. to_leaf`` that point toward ``to_leaf``."""
    path = path_between(tree, from_leaf, to_leaf)
    for a, b in zip(path, path[1:]):
        state.dirty.add((b, a))
    return state


@lru_cache(maxsize=256)
def _outgoing(tree: Tree, leaf: int) -> tuple[Edge, ...]:
    rooted = root_at(tree, leaf)
    return tuple((c, p) for p, c in rooted.edges)


def _outgoing_any(tree: Tree, node: int) -> tuple[Edge, ...]:
    # messages whose upstream side contains ``node``
    out = []
    for nb in tree.neighbors(node):
        stack = [(nb, node)]
        while stack:
            a, b = stack.pop()
            out.append((a, b))
            stack.extend((c, a) for c in tree.neighbors(a) if c != b)
    return tuple(out)


def invalidate_from(state: ScalingState, tree: Tree, node: int) -> ScalingState:
    """Mark every message that depends on the scaling at ``node`` as dirty."""
    if tree.node_count > 1 and tree.degree(node) == 1:
        state.dirty.update(_outgoing(tree, node))
    else:
        state.dirty.update(_outgoing_any(tree, node))
    return state
