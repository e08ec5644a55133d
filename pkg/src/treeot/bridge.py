"""Schrödinger bridges on rooted trees.

A prior Markov law on a tree rooted at a leaf is given by one row-stochastic
transition matrix per directed edge. The bridge is the law closest in KL to
the prior whose leaf marginals are prescribed. Its edge plans factor as

    M[p, c] = diag(fwd[p] * others[p, c]) @ A[p, c] @ diag(bwd[c])

where ``bwd`` is propagated from the leaves toward the root, ``fwd`` from
the root outward, and ``others[p, c]`` collects the backward messages of
``c``'s siblings. The leaf scalings are found by alternating updates that
match one leaf marginal at a time.

This module deliberately keeps its own propagation code rather than reusing
:mod:`treeot.projections`, so that the two solvers can be checked against
each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    IncompatibleRowSums,
    InvalidInput,
    MaxSweepsExceeded,
    NonPositiveEntry,
    NumericalUnderflow,
    RootNotLeaf,
    ShapeMismatch,
    SupportViolation,
)
from .graph import RootedTree, leaf_schedule, leaves, path_between, root_at, validate_tree
from .numerics import LogDomain, as_vector, check_mass_balance, domain, kl_divergence, neg_entropy

Edge = tuple[int, int]
ROW_SUM_TOL = 1e-12


@dataclass(eq=False)
class MarkovTreeProblem:
    """Prior transitions on a rooted tree plus prescribed leaf marginals.

    ``transitions[(p, c)]`` is ``n_p x n_c`` and row-stochastic. Zero entries
    are allowed. The root must carry a marginal; other leaves may be left
    free. ``log_transitions`` can be supplied to avoid losing precision on
    tiny entries; otherwise it is computed from ``transitions``.
    """

    rooted: RootedTree
    transitions: dict
    leaf_marginals: dict
    log_transitions: dict | None = None
    sizes: dict = field(init=False, repr=False)

    def __post_init__(self):
        rt = self.rooted
        trans, logt, sizes = {}, {}, {}
        for p, c in rt.edges:
            if (p, c) not in self.transitions:
                raise InvalidInput(f"no transition matrix for edge ({p}, {c})")
            A = np.asarray(self.transitions[(p, c)], dtype=float)
            if A.ndim != 2 or not np.all(np.isfinite(A)) or (A < 0).any():
                raise InvalidInput(f"transition ({p}, {c}) must be a nonnegative finite matrix")
            if np.max(np.abs(A.sum(axis=1) - 1.0)) > ROW_SUM_TOL * max(1, A.shape[1]):
                raise InvalidInput(f"transition ({p}, {c}) is not row-stochastic")
            for j, n in ((p, A.shape[0]), (c, A.shape[1])):
                if sizes.setdefault(j, n) != n:
                    raise ShapeMismatch(f"node {j} has sizes {sizes[j]} and {n}")
            trans[(p, c)] = A
            if self.log_transitions is not None and (p, c) in self.log_transitions:
                logt[(p, c)] = np.asarray(self.log_transitions[(p, c)], dtype=float)
            else:
                with np.errstate(divide="ignore"):
                    logt[(p, c)] = np.log(A)
        lv = set(leaves(rt.base))
        marg = {}
        for j, m in self.leaf_marginals.items():
            j = int(j)
            if j not in lv:
                raise InvalidInput(f"node {j} is not a leaf; only leaves carry marginals")
            m = as_vector(m, f"marginal {j}")
            if sizes.setdefault(j, len(m)) != len(m):
                raise ShapeMismatch(f"marginal {j} has length {len(m)}, node size {sizes[j]}")
            marg[j] = m
        if rt.root not in marg:
            raise InvalidInput(f"the root {rt.root} must carry a marginal")
        self.transitions, self.log_transitions, self.leaf_marginals, self.sizes = trans, logt, marg, sizes

    @property
    def root(self) -> int:
        return self.rooted.root

    @property
    def strictly_positive(self) -> bool:
        return all(np.all(A > 0) for A in self.transitions.values())

    def schedule(self) -> list[int]:
        """Root first, then the other constrained leaves in DFS order."""
        rest = [j for j in leaf_schedule(self.rooted.base, only=self.leaf_marginals) if j != self.root]
        return [self.root] + rest


@dataclass
class BridgeSolution:
    """Marginals, plans and propagation factors of a solved bridge.

    ``mu`` and ``plans`` carry the problem's mass; the factors belong to the
    unit-mass problem. ``v`` follows the usual convention at the root
    (``v[root] = bwd[root] / mu[root]``).
    """

    mu: dict[int, np.ndarray]
    plans: dict[Edge, np.ndarray]
    phi: dict[int, np.ndarray]
    phi_hat: dict[int, np.ndarray]
    phi_excl: dict[Edge, np.ndarray]
    v: dict[int, np.ndarray]
    sweeps: int = 0
    residual_history: list[float] = field(default_factory=list)
    converged: bool = True
    mass: float = 1.0
    log_domain: bool = False


class _Factors:
    """Cached backward/forward factors for one set of leaf scalings.

    ``up[c]`` is ``A[p, c] @ bwd[c]``; ``hat[j]`` is the forward factor.
    Each has its own dirty set, refreshed on demand.
    """

    def __init__(self, problem: MarkovTreeProblem, log: bool, strict: bool):
        self.P = problem
        self.rt = problem.rooted
        self.D = domain(log)
        self.log = log
        self.strict = strict
        self.A = problem.log_transitions if log else problem.transitions
        self.v = {j: self.D.ones(problem.sizes[j]) for j in leaves(self.rt.base) if j != self.rt.root}
        self.hat_root = self.D.ones(problem.sizes[self.rt.root])
        self.up: dict[int, np.ndarray] = {}
        self.hat: dict[int, np.ndarray] = {self.rt.root: self.hat_root}
        nonroot = [j for j in self.rt.order if j != self.rt.root]
        self.up_dirty = set(nonroot)
        self.hat_dirty = set(nonroot)
        self._stale_hat = {}
        self._ancestors = {}

    def _check(self, x, what, allow_zero=False):
        return self.D.check(x, what, allow_zero=allow_zero or not self.strict)

    def bwd(self, j: int):
        ch = self.rt.children[j]
        if not ch:
            return self.v[j] if j != self.rt.root else self.D.ones(self.P.sizes[j])
        acc = None
        for c in ch:
            m = self.up_msg(c)
            acc = m if acc is None else self.D.mul(acc, m)
        return acc

    def up_msg(self, c: int):
        if c in self.up_dirty:
            stack = [c]
            while stack:
                k = stack[-1]
                pending = [g for g in self.rt.children[k] if g in self.up_dirty]
                if pending:
                    stack.extend(pending)
                    continue
                stack.pop()
                if k not in self.up_dirty:
                    continue
                msg = self.D.matvec(self.A[(self.rt.parent[k], k)], self.bwd(k))
                self.up[k] = self._check(msg, f"backward message from {k}")
                self.up_dirty.discard(k)
        return self.up[c]

    def others(self, p: int, c: int):
        acc = None
        for s in self.rt.children[p]:
            if s != c:
                m = self.up_msg(s)
                acc = m if acc is None else self.D.mul(acc, m)
        return self.D.ones(self.P.sizes[p]) if acc is None else acc

    def fwd(self, j: int):
        if j in self.hat_dirty:
            chain = [j]
            while self.rt.parent.get(chain[-1]) in self.hat_dirty:
                chain.append(self.rt.parent[chain[-1]])
            for c in reversed(chain):
                p = self.rt.parent[c]
                x = self.D.mul(self.hat[p], self.others(p, c))
                self.hat[c] = self._check(self.D.rmatvec(self.A[(p, c)], x), f"forward factor at {c}")
                self.hat_dirty.discard(c)
        return self.hat[j]

    def set_leaf(self, leaf: int, value) -> None:
        if leaf == self.rt.root:
            self.hat_root = value
            self.hat[leaf] = value
            self.hat_dirty = set(self.rt.order) - {leaf}
            return
        self.v[leaf] = value
        anc = self._ancestors.get(leaf)
        if anc is None:
            anc = self._ancestors[leaf] = [leaf] + self.rt.ancestors(leaf)
            self._stale_hat[leaf] = set(self.rt.order) - set(anc)
        self.up_dirty.update(a for a in anc if a != self.rt.root)
        self.hat_dirty |= self._stale_hat[leaf]

    def leaf_marginal(self, leaf: int):
        if leaf == self.rt.root:
            return self.D.mul(self.bwd(leaf), self.hat_root)
        return self.D.mul(self.v[leaf], self.fwd(leaf))


def _new_factors(problem, log, v=None):
    f = _Factors(problem, log, strict=problem.strictly_positive and not log)
    if v:
        D = f.D
        for j, x in v.items():
            x = np.asarray(x, dtype=float)
            if j == problem.root:
                with np.errstate(divide="ignore"):
                    f.set_leaf(j, D.from_linear(1.0 / x))
            else:
                f.set_leaf(j, D.from_linear(x))
    return f


def _check_v(v):
    for j, x in v.items():
        x = np.asarray(x, dtype=float)
        if np.isnan(x).any() or (x < 0).any():
            raise NonPositiveEntry(f"scaling at leaf {j} has negative or undefined entries")


def backward_pass(problem: MarkovTreeProblem, v) -> dict[int, np.ndarray]:
    """Backward factors for leaf scalings ``v``, computed leaves to root."""
    _check_v(v)
    f = _new_factors(problem, log=False, v=v)
    phi = {j: f.bwd(j) for j in reversed(problem.rooted.order)}
    for j, x in phi.items():
        if not np.all(np.isfinite(x)) or (x < 0).any():
            raise NonPositiveEntry(f"backward factor at {j} is not a nonnegative finite vector")
    return phi


def forward_pass(problem: MarkovTreeProblem, v, phi=None):
    """Forward factors and sibling products for leaf scalings ``v``.

    ``v`` must include the root. ``phi`` is accepted for symmetry with the
    backward pass; it is recomputed internally from ``v``.
    """
    _check_v(v)
    if problem.root not in v:
        raise InvalidInput("v must include the root scaling")
    f = _new_factors(problem, log=False, v=v)
    hat = {j: f.fwd(j) for j in problem.rooted.order}
    excl = {(p, c): f.others(p, c) for p, c in problem.rooted.edges}
    for j, x in hat.items():
        if not np.all(np.isfinite(x)) or (x < 0).any():
            raise NonPositiveEntry(f"forward factor at {j} is not a nonnegative finite vector")
    return hat, excl


def _run(problem, mu, tol, max_sweeps, log, init=None):
    f = _new_factors(problem, log, init)
    D = f.D
    sched = problem.schedule()
    mu_d = {j: D.from_linear(m) for j, m in mu.items()}
    history = []
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for leaf in sched:
            if leaf == problem.root:
                new = D.div(mu_d[leaf], f.bwd(leaf))
            else:
                new = D.div(mu_d[leaf], f.fwd(leaf))
            f.set_leaf(leaf, D.check(new, f"scaling at leaf {leaf}", allow_zero=True))
        res = max(float(np.abs(D.to_linear(f.leaf_marginal(j)) - mu[j]).sum()) for j in sched)
        history.append(res)
        if not np.isfinite(res):
            raise NumericalUnderflow(f"residual became {res}")
        if res <= tol:
            converged = True
            break
    return f, sweeps, history, converged


def _assemble(problem, f, mass, sweeps, history, converged) -> BridgeSolution:
    D = f.D
    rt = problem.rooted
    lin = D.to_linear
    bwd = {j: f.bwd(j) for j in rt.order}
    fwd = {j: f.fwd(j) for j in rt.order}
    excl = {(p, c): f.others(p, c) for p, c in rt.edges}
    mu = {j: lin(D.mul(bwd[j], fwd[j])) * mass for j in rt.order}
    plans = {}
    for p, c in rt.edges:
        M = D.outer_scale(D.mul(fwd[p], excl[(p, c)]), f.A[(p, c)], bwd[c])
        plans[(p, c)] = lin(M) * mass
    v = {j: lin(x) for j, x in f.v.items()}
    with np.errstate(divide="ignore"):
        v[rt.root] = 1.0 / lin(f.hat_root)
    return BridgeSolution(
        mu=mu,
        plans=plans,
        phi={j: lin(x) for j, x in bwd.items()},
        phi_hat={j: lin(x) for j, x in fwd.items()},
        phi_excl={e: lin(x) for e, x in excl.items()},
        v=v,
        sweeps=sweeps,
        residual_history=history,
        converged=converged,
        mass=mass,
        log_domain=f.log,
    )


def bridge_sinkhorn(problem: MarkovTreeProblem, tol: float = 1e-8, max_sweeps: int = 10000,
                    log_domain: str = "auto", init_v=None) -> BridgeSolution:
    """Alternating leaf updates until every prescribed leaf marginal is matched.

    Each sweep updates the root first and then the remaining constrained
    leaves in depth-first order. ``tol`` bounds the L1 residual on the
    unit-mass problem. The linear domain is used only when every transition
    is strictly positive; ``"auto"`` falls back to log arithmetic on
    underflow.
    """
    labels = sorted(problem.leaf_marginals)
    normed, mass = check_mass_balance([problem.leaf_marginals[j] for j in labels])
    mu = dict(zip(labels, normed))
    if log_domain not in ("auto", "on", "off"):
        raise InvalidInput(f"log_domain must be 'auto', 'on' or 'off', got {log_domain!r}")
    if log_domain == "on" or (log_domain == "auto" and not problem.strictly_positive):
        out = _run(problem, mu, tol, max_sweeps, True, init_v)
    elif log_domain == "off":
        out = _run(problem, mu, tol, max_sweeps, False, init_v)
    else:
        try:
            out = _run(problem, mu, tol, max_sweeps, False, init_v)
        except NumericalUnderflow:
            out = _run(problem, mu, tol, max_sweeps, True, init_v)
    f, sweeps, history, converged = out
    sol = _assemble(problem, f, mass, sweeps, history, converged)
    if not sol.converged:
        raise MaxSweepsExceeded(
            f"bridge did not converge in {sol.sweeps} sweeps (residual {sol.residual_history[-1]:.3e})", sol
        )
    return sol


def _path_scales(problem: MarkovTreeProblem, path):
    """Log reference weights along ``path`` starting from the current root."""
    loga = {path[0]: np.zeros(problem.sizes[path[0]])}
    for a, b in zip(path, path[1:]):
        L = problem.log_transitions[(a, b)]
        loga[b] = LogDomain.rmatvec(L, loga[a])
    return loga


def reroot_problem(problem: MarkovTreeProblem, new_root: int) -> MarkovTreeProblem:
    """The equivalent problem rooted at another leaf.

    Transitions on the path between the roots are reversed against reference
    weights propagated from the old root (all-ones there), which leaves the
    optimal marginals unchanged. Rows of states that the prior never reaches
    become uniform.
    """
    base = problem.rooted.base
    if new_root not in leaves(base):
        raise RootNotLeaf(f"node {new_root} is not a leaf")
    rt = root_at(base, new_root)
    path = path_between(base, problem.root, new_root)
    loga = _path_scales(problem, path)
    reversed_edges = {(b, a): (a, b) for a, b in zip(path, path[1:])}
    trans, logt = {}, {}
    for p, c in rt.edges:
        if (p, c) in reversed_edges:
            a, b = reversed_edges[(p, c)]
            L = problem.log_transitions[(a, b)].T + loga[a][None, :] - loga[b][:, None]
            dead = ~np.isfinite(loga[b])
            L[dead, :] = -np.log(L.shape[1])
            with np.errstate(divide="ignore"):
                L = L - logsumexp(L, axis=1)[:, None]
            trans[(p, c)], logt[(p, c)] = np.exp(L), L
        else:
            trans[(p, c)] = problem.transitions[(p, c)]
            logt[(p, c)] = problem.log_transitions[(p, c)]
    return MarkovTreeProblem(rt, trans, problem.leaf_marginals, logt)


def reroot_solution(problem: MarkovTreeProblem, solution: BridgeSolution, new_root: int) -> BridgeSolution:
    """Express a solution in the orientation rooted at ``new_root``.

    Marginals are unchanged and plans on the path between the roots are
    transposed. The factors are rebuilt from the mapped leaf scalings.
    """
    new_problem = reroot_problem(problem, new_root)
    old_root = problem.root
    path = path_between(problem.rooted.base, old_root, new_root)
    plans = {}
    for p, c in new_problem.rooted.edges:
        plans[(p, c)] = solution.plans[(p, c)] if (p, c) in solution.plans else solution.plans[(c, p)].T
    if new_root == old_root:
        return BridgeSolution(dict(solution.mu), plans, dict(solution.phi), dict(solution.phi_hat),
                              dict(solution.phi_excl), dict(solution.v), solution.sweeps,
                              list(solution.residual_history), solution.converged, solution.mass,
                              solution.log_domain)
    a = np.exp(_path_scales(problem, path)[new_root])
    v = dict(solution.v)
    with np.errstate(divide="ignore"):
        v[old_root] = 1.0 / solution.v[old_root]
        new_v_root = 1.0 / (solution.v[new_root] * a)
    v[new_root] = new_v_root
    log = solution.log_domain or not new_problem.strictly_positive
    f = _new_factors(new_problem, log, v)
    unit = _assemble(new_problem, f, 1.0, 0, [], True)
    return BridgeSolution(
        mu=dict(solution.mu),
        plans=plans,
        phi=unit.phi,
        phi_hat=unit.phi_hat,
        phi_excl=unit.phi_excl,
        v=v,
        sweeps=solution.sweeps,
        residual_history=list(solution.residual_history),
        converged=solution.converged,
        mass=solution.mass,
        log_domain=log,
    )


@dataclass(frozen=True)
class BridgeObjective:
    """The bridge objective evaluated two ways.

    ``conditional`` sums ``H(M | diag(mu_parent) A)`` over edges.
    ``unconditional`` sums ``H(M | A)`` and subtracts the parent-marginal
    entropies, weighted by each node's number of children.
    """

    conditional: float
    unconditional: float


def bridge_objective(problem: MarkovTreeProblem, solution: BridgeSolution) -> BridgeObjective:
    rt = problem.rooted
    cond = 0.0
    plain = 0.0
    for p, c in rt.edges:
        M = solution.plans[(p, c)]
        A = problem.transitions[(p, c)]
        cond += kl_divergence(M, solution.mu[p][:, None] * A)
        plain += kl_divergence(M, A)
    if not (np.isfinite(cond) and np.isfinite(plain)):
        raise SupportViolation("a plan puts mass where the prior has none")
    for j in rt.order:
        plain -= len(rt.children[j]) * neg_entropy(solution.mu[j])
    return BridgeObjective(cond, plain)


@dataclass
class PathBridge:
    """Result of a bridge on a chain ``1 -> 2 -> ... -> J``.

    ``stochastic[t]`` maps states at step ``t`` to step ``t + 1``; rows for
    states with zero mass are uniform and listed in ``zero_mass`` as
    ``(t, state)`` pairs (both 0-based).
    """

    plans: list[np.ndarray]
    marginals: list[np.ndarray]
    stochastic: list[np.ndarray]
    zero_mass: list[tuple[int, int]]
    solution: BridgeSolution


def chain_problem(transitions, mu_first, mu_last=None) -> MarkovTreeProblem:
    J = len(transitions) + 1
    tree = validate_tree(J, [(t, t + 1) for t in range(1, J)])
    rt = root_at(tree, 1)
    marg = {1: mu_first}
    if mu_last is not None:
        marg[J] = mu_last
    return MarkovTreeProblem(rt, {(t, t + 1): A for t, A in enumerate(transitions, start=1)}, marg)


def path_bridge(transitions, mu_first, mu_last, tol: float = 1e-8, max_sweeps: int = 10000,
                log_domain: str = "auto") -> PathBridge:
    """Bridge between two endpoint distributions along a chain of transitions."""
    if len(transitions) < 1:
        raise InvalidInput("need at least one transition")
    problem = chain_problem(transitions, mu_first, mu_last)
    sol = bridge_sinkhorn(problem, tol=tol, max_sweeps=max_sweeps, log_domain=log_domain)
    J = len(transitions) + 1
    plans = [sol.plans[(t, t + 1)] for t in range(1, J)]
    margs = [sol.mu[t] for t in range(1, J + 1)]
    stoch, flags = [], []
    for t, M in enumerate(plans):
        rows = M.sum(axis=1)
        Abar = np.full_like(M, 1.0 / M.shape[1])
        live = rows > 0
        Abar[live] = M[live] / rows[live, None]
        flags.extend((t, int(i)) for i in np.flatnonzero(~live))
        stoch.append(Abar)
    return PathBridge(plans, margs, stoch, flags, sol)


def ot_to_bridge(problem, root: int):
    """Turn a transport problem into a bridge problem rooted at ``root``.

    Each oriented kernel ``exp(-C / eps)`` is row-normalized,
    ``A = diag(b) K`` with ``b = 1 / (K 1)``. All out-edges of a node must
    share the same ``b``. Returns the bridge problem and the ``b`` vectors by
    node.
    """
    tree = problem.tree
    lv = set(leaves(tree))
    for j in problem.constraints:
        if j not in lv:
            raise InvalidInput(f"node {j} is constrained but not a leaf; preprocess first")
    rt = root_at(tree, root)
    trans, logt, b_terms = {}, {}, {}
    for p, c in rt.edges:
        L = problem.log_kernel(p, c)
        logb = -LogDomain.matvec(L, np.zeros(L.shape[1]))
        if not np.all(np.isfinite(logb)):
            raise InvalidInput(f"kernel ({p}, {c}) has an all-zero row")
        b = np.exp(logb)
        if p in b_terms:
            ref = b_terms[p]
            if np.max(np.abs(b - ref)) > 1e-9 * np.max(np.abs(ref)):
                raise IncompatibleRowSums(f"row sums of kernels leaving node {p} differ")
        else:
            b_terms[p] = b
        logt[(p, c)] = L + logb[:, None]
        trans[(p, c)] = np.exp(logt[(p, c)])
    return MarkovTreeProblem(rt, trans, dict(problem.constraints), logt), b_terms
