"""Scheduled Sinkhorn iterations for tree-structured multi-marginal transport.

Problems with constraints on internal nodes or free leaves are first reduced
to pieces whose constrained set is exactly the leaf set: free leaves are
folded into their neighbour as a fixed weight, and the tree is cut at every
constrained internal node. Each piece is solved by cycling over its leaves,
and the per-piece scalings are glued back into one scaling state on the
original tree.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import projections as proj
from .errors import (
    EpsilonNonPositive,
    InvalidInput,
    MaxSweepsExceeded,
    MissingEdgeCost,
    NoConstraints,
    NotConverged,
    NumericalUnderflow,
    ShapeMismatch,
)
from .graph import Tree, leaf_schedule, validate_tree
from .numerics import LogDomain, as_vector, check_mass_balance, domain

Edge = tuple[int, int]

_RESIDUAL_NORM = "max over constrained leaves of the L1 distance to the target"


@dataclass(frozen=True, eq=False)
class TreeOTProblem:
    """Entropic multi-marginal transport with a cost that splits over tree edges.

    ``edge_costs`` may be keyed by either orientation of an edge; a matrix
    keyed ``(a, b)`` has shape ``n_a x n_b``. ``log_kernels``, when given,
    replaces ``-C / epsilon`` (used when the kernel itself is the primary
    data, e.g. a stochastic matrix with structural zeros).
    """

    tree: Tree
    edge_costs: dict
    epsilon: float
    constraints: dict
    log_kernels: dict | None = None

    def __post_init__(self):
        try:
            eps = float(self.epsilon)
        except (TypeError, ValueError):
            eps = math.nan
        if not (eps > 0 and math.isfinite(eps)):
            raise EpsilonNonPositive(f"epsilon must be a positive number, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)
        costs = {}
        for a, b in self.tree.edges:
            C = _lookup(self.edge_costs, a, b)
            if C is None:
                raise MissingEdgeCost(f"no cost matrix for edge ({a}, {b})")
            C = np.asarray(C, dtype=float)
            if C.ndim != 2 or np.isnan(C).any() or (C == -np.inf).any():
                raise InvalidInput(f"cost on edge ({a}, {b}) must be a real matrix")
            costs[(a, b)] = C
        logk = None
        if self.log_kernels is not None:
            logk = {}
            for a, b in self.tree.edges:
                L = _lookup(self.log_kernels, a, b)
                if L is None:
                    raise MissingEdgeCost(f"no kernel for edge ({a}, {b})")
                logk[(a, b)] = np.asarray(L, dtype=float)
        cons = {}
        for j, m in self.constraints.items():
            self.tree.check_node(int(j))
            cons[int(j)] = as_vector(m, f"marginal {j}")
        sizes: dict[int, int] = {}
        for (a, b), C in costs.items():
            for j, n in ((a, C.shape[0]), (b, C.shape[1])):
                if sizes.setdefault(j, n) != n:
                    raise ShapeMismatch(f"node {j} has size {sizes[j]} on one edge and {n} on another")
        for j, m in cons.items():
            if sizes.setdefault(j, len(m)) != len(m):
                raise ShapeMismatch(f"marginal {j} has length {len(m)}, node size is {sizes[j]}")
        if len(sizes) != self.tree.node_count:
            raise ShapeMismatch("node sizes are undetermined; constrain the isolated node")
        object.__setattr__(self, "edge_costs", costs)
        object.__setattr__(self, "log_kernels", logk)
        object.__setattr__(self, "constraints", cons)
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def from_kernels(cls, tree: Tree, kernels, constraints, epsilon: float = 1.0):
        """Build a problem whose edge kernels are given directly (cost ``-eps log K``)."""
        logk, costs = {}, {}
        for a, b in tree.edges:
            K = _lookup(kernels, a, b)
            if K is None:
                raise MissingEdgeCost(f"no kernel for edge ({a}, {b})")
            K = np.asarray(K, dtype=float)
            if (K < 0).any():
                raise InvalidInput(f"kernel on edge ({a}, {b}) has negative entries")
            with np.errstate(divide="ignore"):
                logk[(a, b)] = np.log(K)
            costs[(a, b)] = -epsilon * logk[(a, b)]
        return cls(tree, costs, epsilon, constraints, log_kernels=logk)

    def with_epsilon(self, epsilon: float) -> "TreeOTProblem":
        if self.log_kernels is not None:
            return TreeOTProblem(self.tree, {e: -epsilon * L for e, L in self.log_kernels.items()},
                                 epsilon, self.constraints, self.log_kernels)
        return TreeOTProblem(self.tree, self.edge_costs, epsilon, self.constraints)

    def with_constraints(self, constraints) -> "TreeOTProblem":
        return TreeOTProblem(self.tree, self.edge_costs, self.epsilon, constraints, self.log_kernels)

    def cost(self, j: int, k: int) -> np.ndarray:
        return _oriented(self.edge_costs, j, k)

    def log_kernel(self, j: int, k: int) -> np.ndarray:
        if self.log_kernels is not None:
            return _oriented(self.log_kernels, j, k)
        return -_oriented(self.edge_costs, j, k) / self.epsilon

    @cached_property
    def _log_kernel_map(self):
        return {(j, k): self.log_kernel(j, k) for j, k in self.tree.directed_edges()}

    @cached_property
    def _linear_kernel_map(self):
        return {e: np.exp(L) for e, L in self._log_kernel_map.items()}

    def kernels(self, log: bool = False) -> dict:
        """Kernels for both orientations of every edge, in the requested domain."""
        return self._log_kernel_map if log else self._linear_kernel_map

    @cached_property
    def strictly_positive(self) -> bool:
        return all(np.all(K > 0) and np.all(np.isfinite(K)) for K in self._linear_kernel_map.values())


def _lookup(mapping, a, b):
    if (a, b) in mapping:
        return mapping[(a, b)]
    if (b, a) in mapping:
        return np.asarray(mapping[(b, a)]).T
    return None


def _oriented(mapping, j, k):
    if (j, k) in mapping:
        return mapping[(j, k)]
    return mapping[(k, j)].T


@dataclass
class Subproblem:
    """A piece of a preprocessed problem with relabeled nodes ``1..m``.

    ``nodes[i]`` is the original label of local node ``i + 1``;
    ``log_weights`` are fixed node factors left behind by folded leaves.
    """

    problem: TreeOTProblem
    nodes: tuple[int, ...]
    log_weights: dict[int, np.ndarray]


@dataclass
class SolveReport:
    scaling: proj.ScalingState
    sweeps: int
    residual_history: list[float]
    dual_history: list[float]
    converged: bool
    mass: float
    log_domain: bool
    pieces: int = 1
    residual_norm: str = field(default=_RESIDUAL_NORM, repr=False)

    @property
    def residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else math.inf

    def contraction_ratios(self) -> list[float]:
        r = self.residual_history
        return [b / a for a, b in zip(r, r[1:]) if a > 0]


def preprocess(problem: TreeOTProblem) -> list[Subproblem]:
    """Reduce to pieces whose constrained nodes are exactly their leaves."""
    tree = problem.tree
    gamma = set(problem.constraints)
    if not gamma:
        raise NoConstraints("at least one node must carry a marginal")
    adj = {j: set(tree.neighbors(j)) for j in tree.nodes}
    logw: dict[int, np.ndarray] = {}

    queue = sorted((j for j in tree.nodes if len(adj[j]) == 1 and j not in gamma), reverse=True)
    while queue:
        leaf = queue.pop()
        if len(adj[leaf]) != 1 or leaf in gamma:
            continue
        (k,) = adj[leaf]
        L = problem.log_kernel(k, leaf)
        w = logw.pop(leaf, np.zeros(L.shape[1]))
        logw[k] = logw.get(k, 0.0) + LogDomain.matvec(L, w)
        adj[k].discard(leaf)
        del adj[leaf]
        if len(adj[k]) == 1 and k not in gamma:
            queue.append(k)
            queue.sort(reverse=True)

    remaining = sorted(adj)
    if len(remaining) == 1:
        return [_make_piece(problem, remaining, [], logw)]

    cuts = {j for j in remaining if j in gamma and len(adj[j]) >= 2}
    edges = sorted({(min(a, b), max(a, b)) for a in remaining for b in adj[a]})
    parent = {e: e for e in edges}

    def find(e):
        while parent[e] != e:
            parent[e] = parent[parent[e]]
            e = parent[e]
        return e

    for j in remaining:
        if j in cuts:
            continue
        inc = [(min(j, k), max(j, k)) for k in adj[j]]
        for e in inc[1:]:
            parent[find(e)] = find(inc[0])

    groups: dict = {}
    for e in edges:
        groups.setdefault(find(e), []).append(e)
    pieces = sorted(groups.values(), key=lambda es: min(min(e) for e in es))

    out, weighted = [], set()
    for es in pieces:
        nodes = sorted({j for e in es for j in e})
        w = {}
        for j in nodes:
            if j in logw and j not in weighted:
                w[j] = logw[j]
                weighted.add(j)
        out.append(_make_piece(problem, nodes, es, w))
    return out


def _make_piece(problem, nodes, edges, logw) -> Subproblem:
    local = {g: i + 1 for i, g in enumerate(nodes)}
    orig = {(min(a, b), max(a, b)): (a, b) for a, b in problem.tree.edges}
    tree_edges, costs, logk = [], {}, {}
    for e in edges:
        a, b = orig[e]
        tree_edges.append((local[a], local[b]))
        costs[(local[a], local[b])] = problem.edge_costs[(a, b)]
        if problem.log_kernels is not None:
            logk[(local[a], local[b])] = problem.log_kernels[(a, b)]
    sub_tree = validate_tree(len(nodes), tree_edges)
    cons = {local[j]: problem.constraints[j] for j in nodes if j in problem.constraints}
    sub = TreeOTProblem(sub_tree, costs, problem.epsilon, cons, logk if problem.log_kernels is not None else None)
    weights = {local[j]: np.asarray(w, dtype=float) for j, w in logw.items() if j in local}
    return Subproblem(sub, tuple(nodes), weights)


@dataclass
class _PieceResult:
    state: proj.ScalingState
    sweeps: int
    residuals: list[float]
    duals: list[float]
    converged: bool


def _iterate(sub: Subproblem, tol, max_sweeps, log) -> _PieceResult:
    P = sub.problem
    tree = P.tree
    D = domain(log)
    strict = P.strictly_positive and not log
    K = P.kernels(log)
    weights = {}
    for j, lw in sub.log_weights.items():
        w = lw if log else np.exp(lw)
        if strict:
            D.check(w, f"weight at node {j}")
        weights[j] = w
    state = proj.ScalingState.initial(tree, P.sizes, P.constraints, log, weights, strict)
    mu = {j: D.from_linear(m) for j, m in P.constraints.items()}
    schedule = leaf_schedule(tree) if tree.node_count > 1 else [1]
    residuals, duals = [], []
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for leaf in schedule:
            inc = proj.incoming(state, tree, K, leaf)
            u = mu[leaf] if inc is None else D.div(mu[leaf], inc)
            state.u[leaf] = D.check(u, f"scaling at node {leaf}", allow_zero=True)
            if tree.node_count > 1:
                proj.invalidate_from(state, tree, leaf)
        marg = {leaf: _marginal(state, tree, K, leaf, P.sizes) for leaf in schedule}
        res = max(float(np.abs(marg[j] - P.constraints[j]).sum()) for j in schedule)
        total = float(marg[schedule[0]].sum())
        dual = -total
        for j in schedule:
            pos = P.constraints[j] > 0
            lu = state.u[j][pos] if log else np.log(state.u[j][pos])
            dual += float(np.dot(P.constraints[j][pos], lu))
        residuals.append(res)
        duals.append(P.epsilon * dual)
        if not np.isfinite(res):
            raise NumericalUnderflow(f"residual became {res}")
        if res <= tol:
            converged = True
            break
    return _PieceResult(state, sweeps, residuals, duals, converged)


def _marginal(state, tree, K, j, sizes):
    if tree.node_count == 1:
        return state.ops.to_linear(state.factor(j))
    return proj.project_marginal(state, tree, K, j)


def _solve_piece(sub: Subproblem, tol, max_sweeps, log_domain) -> _PieceResult:
    if log_domain == "on":
        return _iterate(sub, tol, max_sweeps, True)
    if log_domain == "off":
        return _iterate(sub, tol, max_sweeps, False)
    if log_domain != "auto":
        raise InvalidInput(f"log_domain must be 'auto', 'on' or 'off', got {log_domain!r}")
    if not sub.problem.strictly_positive:
        return _iterate(sub, tol, max_sweeps, True)
    try:
        return _iterate(sub, tol, max_sweeps, False)
    except NumericalUnderflow:
        return _iterate(sub, tol, max_sweeps, True)


def solve(problem: TreeOTProblem, tol: float = 1e-8, max_sweeps: int = 10000,
          log_domain: str = "auto") -> SolveReport:
    """Solve the problem and return a report holding the converged scalings.

    Marginals are normalized to unit mass for the iteration; ``tol`` applies
    to the normalized residual. Raises :class:`MaxSweepsExceeded` (carrying
    the report) when the tolerance is not reached.
    """
    labels = sorted(problem.constraints)
    if not labels:
        raise NoConstraints("at least one node must carry a marginal")
    normed, mass = check_mass_balance([problem.constraints[j] for j in labels])
    unit = problem.with_constraints(dict(zip(labels, normed)))
    pieces = preprocess(unit)
    results = [_solve_piece(p, tol, max_sweeps, log_domain) for p in pieces]

    log = any(r.state.log_domain for r in results)
    D = domain(log)
    collected: dict[int, list] = {}
    for sub, r in zip(pieces, results):
        for local, u in r.state.u.items():
            g = sub.nodes[local - 1]
            collected.setdefault(g, []).append(u if r.state.log_domain == log else D.from_linear(u))
    u_global = {}
    for g, us in collected.items():
        acc = us[0]
        for u in us[1:]:
            acc = D.mul(acc, u)
        if len(us) > 1:
            mu = D.from_linear(unit.constraints[g])
            denom = mu * (len(us) - 1) if log else mu ** (len(us) - 1)
            acc = D.div(acc, denom)
        u_global[g] = acc

    state = proj.ScalingState.initial(problem.tree, problem.sizes, (), log,
                                      strict=problem.strictly_positive and not log)
    state.u = u_global

    width = max(len(r.residuals) for r in results)
    residuals = [max(_pad(r.residuals, width)[s] for r in results) for s in range(width)]
    duals = [sum(_pad(r.duals, width)[s] for r in results) for s in range(width)]
    report = SolveReport(
        scaling=state,
        sweeps=max(r.sweeps for r in results),
        residual_history=residuals,
        dual_history=duals,
        converged=all(r.converged for r in results),
        mass=mass,
        log_domain=log,
        pieces=len(pieces),
    )
    if not report.converged:
        raise MaxSweepsExceeded(
            f"no convergence after {report.sweeps} sweeps (residual {report.residual:.3e}, tol {tol:.1e})",
            report,
        )
    return report


def _pad(xs, width):
    return list(xs) + [xs[-1]] * (width - len(xs))


def _warn_unconverged(report):
    if not report.converged:
        warnings.warn("extracting from an unconverged solve", NotConverged, stacklevel=3)


def extract_marginal(report: SolveReport, problem: TreeOTProblem, j: int) -> np.ndarray:
    """Marginal of the optimal plan on node ``j``, at the problem's mass."""
    _warn_unconverged(report)
    problem.tree.check_node(j)
    K = problem.kernels(report.scaling.log_domain)
    return _marginal(report.scaling, problem.tree, K, j, problem.sizes) * report.mass


def extract_plan(report: SolveReport, problem: TreeOTProblem, j1: int, j2: int) -> np.ndarray:
    """Bi-marginal of the optimal plan on ``(j1, j2)``; any two nodes, not only edges."""
    _warn_unconverged(report)
    K = problem.kernels(report.scaling.log_domain)
    return proj.project_pair(report.scaling, problem.tree, K, j1, j2) * report.mass


def _ent(x) -> float:
    x = np.asarray(x, dtype=float)
    pos = x > 0
    return float(np.sum(x[pos] * np.log(x[pos])))


def primal_objective(report: SolveReport, problem: TreeOTProblem) -> float:
    """``<C, M> + eps * H(M)`` computed from edge plans and node marginals only.

    For a tensor that factorizes over the tree, ``sum M log M`` equals the sum
    over edges of ``P_e log P_e`` minus ``(deg - 1) P_j log P_j`` over nodes;
    the remaining terms of the normalized entropy are the total mass and the
    number of tensor entries.
    """
    tree = problem.tree
    plans = {(a, b): extract_plan(report, problem, a, b) for a, b in tree.edges}
    margs = {j: extract_marginal(report, problem, j) for j in tree.nodes}
    return _objective_from_parts(problem, plans, margs)


def _objective_from_parts(problem, plans, margs) -> float:
    tree = problem.tree
    cost = 0.0
    xlogx = 0.0
    for (a, b), M in plans.items():
        C = problem.cost(a, b)
        pos = M > 0
        cost += float(np.sum(M[pos] * C[pos]))
        xlogx += _ent(M)
    for j in tree.nodes:
        deg = tree.degree(j) if tree.node_count > 1 else 0
        if deg != 1:
            xlogx -= (deg - 1) * _ent(margs[j])
    mass = float(margs[1].sum())
    entries = math.prod(problem.sizes[j] for j in tree.nodes)
    return cost + problem.epsilon * (xlogx - mass + entries)


@dataclass
class TreeOTSolution:
    """Marginals on every node and plans on every edge of a solved problem."""

    problem: TreeOTProblem
    mu: dict[int, np.ndarray]
    plans: dict[Edge, np.ndarray]
    objective: float
    report: SolveReport


def summarize(report: SolveReport, problem: TreeOTProblem) -> TreeOTSolution:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        plans = {(a, b): extract_plan(report, problem, a, b) for a, b in problem.tree.edges}
        margs = {j: extract_marginal(report, problem, j) for j in problem.tree.nodes}
    return TreeOTSolution(problem, margs, plans, _objective_from_parts(problem, plans, margs), report)
