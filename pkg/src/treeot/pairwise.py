"""Pairwise-regularized baseline and the three-cycle counterexample.

The baseline minimizes a sum of independently regularized two-marginal
transport costs, one per tree edge, with free marginals at unconstrained
nodes. It is solved by cyclic Bregman projections: each edge plan is
``diag(a) K diag(b)``; a constrained node rescales its edge ends to the
target, and a free node replaces its edge-end marginals by their geometric
mean.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import ConvergenceError, MaxSweepsExceeded, NumericalError, ProblemMismatch
from .numerics import check_mass_balance, domain, neg_entropy, shannon_entropy
from .oracle import feasibility_check
from .solver import TreeOTProblem, TreeOTSolution

Edge = tuple[int, int]


@dataclass
class PairwiseSolution:
    problem: TreeOTProblem
    mu: dict[int, np.ndarray]
    plans: dict[Edge, np.ndarray]
    objective: float
    sweeps: int
    residual_history: list[float] = field(default_factory=list)
    converged: bool = True
    log_domain: bool = False


def _edge_objective(problem, plans) -> float:
    total = 0.0
    for (a, b), M in plans.items():
        C = problem.cost(a, b)
        pos = M > 0
        total += float(np.sum(M[pos] * C[pos])) + problem.epsilon * neg_entropy(M)
    return total


def pairwise_solve(problem: TreeOTProblem, tol: float = 1e-8, max_sweeps: int = 10000,
                   log_domain: str = "off") -> PairwiseSolution:
    """Solve the pairwise-regularized problem on the tree.

    The log domain is off by default so that numerical breakdown at small
    ``epsilon`` shows up as a failed solve; breakdown and running out of
    sweeps both raise :class:`ConvergenceError` carrying the partial
    solution.
    """
    if log_domain not in ("on", "off", "auto"):
        raise ValueError(f"log_domain must be 'auto', 'on' or 'off', got {log_domain!r}")
    if log_domain == "auto":
        try:
            return _pairwise(problem, tol, max_sweeps, False)
        except ConvergenceError as exc:
            if not isinstance(exc.__cause__, NumericalError):
                raise
            return _pairwise(problem, tol, max_sweeps, True)
    return _pairwise(problem, tol, max_sweeps, log_domain == "on")


def _pairwise(problem, tol, max_sweeps, log) -> PairwiseSolution:
    tree = problem.tree
    labels = sorted(problem.constraints)
    normed, mass = check_mass_balance([problem.constraints[j] for j in labels])
    target = dict(zip(labels, normed))
    D = domain(log)
    K = problem.kernels(log)
    # scale[(j, k)]: scaling at the j-end of edge {j, k}
    scale = {(j, k): D.ones(problem.sizes[j]) for j, k in tree.directed_edges()}
    tgt = {j: D.from_linear(m) for j, m in target.items()}
    order = sorted(tree.nodes, key=lambda j: (j not in target, j))

    def end_marginal(j, k):
        return D.mul(scale[(j, k)], D.matvec(K[(j, k)], scale[(k, j)]))

    def partial(sweeps, history, converged):
        margs, plans = _collect(problem, D, K, scale, mass)
        return PairwiseSolution(problem, margs, plans, _edge_objective(problem, plans), sweeps,
                                history, converged, log)

    history = []
    sweeps = 0
    try:
        with np.errstate(over="raise", invalid="raise"):
            for sweeps in range(1, max_sweeps + 1):
                for j in order:
                    nbrs = tree.neighbors(j)
                    if not nbrs:
                        continue
                    if j in target:
                        for k in nbrs:
                            m = D.matvec(K[(j, k)], scale[(k, j)])
                            if not log:
                                D.check(m, f"edge ({j}, {k})")
                            scale[(j, k)] = D.div(tgt[j], m)
                    else:
                        ms = {k: end_marginal(j, k) for k in nbrs}
                        if not log:
                            for k, m in ms.items():
                                D.check(m, f"edge ({j}, {k})")
                        if log:
                            bary = sum(ms.values()) / len(nbrs)
                        else:
                            bary = np.exp(sum(np.log(m) for m in ms.values()) / len(nbrs))
                        for k in nbrs:
                            scale[(j, k)] = D.mul(scale[(j, k)], D.div(bary, ms[k]))
                res = _residual(tree, D, target, end_marginal)
                history.append(res)
                if not np.isfinite(res):
                    raise FloatingPointError(f"residual became {res}")
                if res <= tol:
                    break
    except (NumericalError, FloatingPointError) as exc:
        err = ConvergenceError(f"pairwise iteration broke down after {sweeps} sweeps: {exc}",
                               _safe_partial(partial, sweeps, history, False))
        raise err from (exc if isinstance(exc, NumericalError) else NumericalError(str(exc)))
    converged = bool(history) and history[-1] <= tol
    sol = partial(sweeps, history, converged)
    if not converged:
        raise MaxSweepsExceeded(
            f"pairwise iteration stopped at residual {history[-1]:.3e} after {sweeps} sweeps", sol
        )
    return sol


def _safe_partial(partial, *args):
    try:
        with np.errstate(all="ignore"):
            return partial(*args)
    except Exception:  # the state may be too broken to summarize
        return None


def _residual(tree, D, target, end_marginal) -> float:
    res = 0.0
    for j in tree.nodes:
        ms = [D.to_linear(end_marginal(j, k)) for k in tree.neighbors(j)]
        if not ms:
            continue
        if j in target:
            res = max(res, max(float(np.abs(m - target[j]).sum()) for m in ms))
        else:
            ref = ms[0]
            res = max(res, max(float(np.abs(m - ref).sum()) for m in ms[1:]) if len(ms) > 1 else 0.0)
    return res


def _collect(problem, D, K, scale, mass):
    tree = problem.tree
    plans = {}
    for a, b in tree.edges:
        M = D.outer_scale(scale[(a, b)], K[(a, b)], scale[(b, a)])
        plans[(a, b)] = D.to_linear(M) * mass
    margs = {}
    for j in tree.nodes:
        nb = tree.neighbors(j)
        if not nb:
            margs[j] = problem.constraints[j]
            continue
        k = nb[0]
        M = plans[(j, k)] if (j, k) in plans else plans[(k, j)].T
        margs[j] = M.sum(axis=1)
    return margs, plans


@dataclass
class NodeEntropy:
    node: int
    degree: int
    shannon_multi: float
    shannon_pairwise: float
    neg_entropy_multi: float
    neg_entropy_pairwise: float

    @property
    def gap(self) -> float:
        """Pairwise minus multi-marginal Shannon entropy (positive: multi is sharper)."""
        return self.shannon_pairwise - self.shannon_multi


@dataclass
class EntropyReport:
    nodes: list[NodeEntropy]
    edge_terms: float
    node_terms: float
    constant: float

    @property
    def multi_objective(self) -> float:
        return self.edge_terms + self.node_terms + self.constant


def entropy_gap(pairwise_sol: PairwiseSolution, multi_sol: TreeOTSolution) -> EntropyReport:
    """Compare node entropies of the two solutions at every internal node.

    Also splits the multi-marginal objective into per-edge two-marginal
    terms, a node correction ``-eps * sum (deg - 1) H(mu_j)`` and a constant
    that depends only on the state-space sizes.
    """
    p, q = pairwise_sol.problem, multi_sol.problem
    if p.tree != q.tree or p.epsilon != q.epsilon or set(p.constraints) != set(q.constraints):
        raise ProblemMismatch("solutions belong to different problems")
    for j in p.constraints:
        if not np.allclose(p.constraints[j], q.constraints[j], rtol=1e-12, atol=0):
            raise ProblemMismatch(f"marginal {j} differs between the two problems")
    tree = q.tree
    rows = []
    for j in tree.nodes:
        deg = tree.degree(j)
        if deg < 2:
            continue
        rows.append(NodeEntropy(
            j, deg,
            shannon_entropy(multi_sol.mu[j]), shannon_entropy(pairwise_sol.mu[j]),
            neg_entropy(multi_sol.mu[j]), neg_entropy(pairwise_sol.mu[j]),
        ))
    edge_terms = _edge_objective(q, multi_sol.plans)
    node_terms = -q.epsilon * sum((r.degree - 1) * r.neg_entropy_multi for r in rows)
    sizes = q.sizes
    const = float(np.prod([sizes[j] for j in tree.nodes], dtype=float))
    const -= sum(sizes[a] * sizes[b] for a, b in tree.edges)
    const += sum((tree.degree(j) - 1) * sizes[j] for j in tree.nodes if tree.node_count > 1)
    return EntropyReport(rows, edge_terms, node_terms, q.epsilon * const)


@dataclass
class CycleReport:
    """Outcome of the three-node cycle example.

    ``pairwise_value`` is the cost of the explicit pairwise plans,
    ``pairwise_lp_value`` the optimum of the pairwise linear program,
    ``feasible`` whether any joint tensor has the pairwise plans as
    bi-marginals, and ``multi_lower_bound`` the smallest joint cost
    (minimum tensor entry times total mass).
    """

    costs: dict[Edge, np.ndarray]
    plans: dict[Edge, np.ndarray]
    marginals: dict[int, np.ndarray]
    pairwise_value: float
    pairwise_lp_value: float
    feasible: bool
    min_cost_entry: float
    multi_lower_bound: float
    multi_lp_value: float


def cycle_counterexample() -> CycleReport:
    I = np.eye(2)
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    costs = {(1, 2): X, (2, 3): X, (1, 3): I}
    plans = {(1, 2): I, (2, 3): I, (1, 3): X}
    mu1 = np.ones(2)
    mass = float(mu1.sum())
    value = float(sum(np.sum(costs[e] * plans[e]) for e in costs))

    # pairwise LP: three 2x2 plans, mu_1 fixed, shared free marginals at 2 and 3
    edges = list(costs)
    c = np.concatenate([costs[e].ravel() for e in edges])
    rows, rhs = [], []

    def margin(e, side, i):
        r = np.zeros(12)
        k = edges.index(e)
        for a, b in itertools.product(range(2), repeat=2):
            if (a if side == 0 else b) == i:
                r[4 * k + 2 * a + b] = 1.0
        return r

    for i in range(2):
        rows.append(margin((1, 2), 0, i)); rhs.append(mu1[i])
        rows.append(margin((1, 3), 0, i)); rhs.append(mu1[i])
        rows.append(margin((1, 2), 1, i) - margin((2, 3), 0, i)); rhs.append(0.0)
        rows.append(margin((1, 3), 1, i) - margin((2, 3), 1, i)); rhs.append(0.0)
    lp = linprog(c, A_eq=np.array(rows), b_eq=np.array(rhs), bounds=(0, None), method="highs")

    feasible = feasibility_check(plans)
    tensor = np.zeros((2, 2, 2))
    for i1, i2, i3 in itertools.product(range(2), repeat=3):
        tensor[i1, i2, i3] = X[i1, i2] + I[i1, i3] + X[i2, i3]
    min_entry = float(tensor.min())

    # multi-marginal LP over the 8 tensor entries with mode-1 marginal mu_1
    A_eq = np.zeros((2, 8))
    for idx, (i1, _, _) in enumerate(itertools.product(range(2), repeat=3)):
        A_eq[i1, idx] = 1.0
    multi = linprog(tensor.ravel(), A_eq=A_eq, b_eq=mu1, bounds=(0, None), method="highs")

    return CycleReport(
        costs=costs,
        plans=plans,
        marginals={1: mu1, 2: plans[(1, 2)].sum(axis=0), 3: plans[(1, 3)].sum(axis=0)},
        pairwise_value=value,
        pairwise_lp_value=float(lp.fun),
        feasible=feasible,
        min_cost_entry=min_entry,
        multi_lower_bound=min_entry * mass,
        multi_lp_value=float(multi.fun),
    )
