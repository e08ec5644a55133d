"""Brute-force reference computations on explicit dense tensors.

Everything here materializes the full joint tensor, so it only scales to toy
instances. It exists to cross-check the message-passing code and is written
without reference to the tree structure beyond assembling the cost.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import (
    EqualModes,
    MaxSweepsExceeded,
    MissingEdgeCost,
    ModeOutOfRange,
    NoConstraints,
    ShapeMismatch,
    TooLarge,
)
from .graph import Tree
from .numerics import check_mass_balance, neg_entropy

MAX_ENTRIES = 10**6


def _check_size(shape) -> None:
    count = int(np.prod(shape, dtype=np.int64)) if len(shape) else 1
    if count > MAX_ENTRIES:
        raise TooLarge(f"dense tensor would have {count} entries (cap {MAX_ENTRIES})")


def _edge_matrix(edge_costs, a, b):
    if (a, b) in edge_costs:
        return np.asarray(edge_costs[(a, b)], dtype=float)
    if (b, a) in edge_costs:
        return np.asarray(edge_costs[(b, a)], dtype=float).T
    raise MissingEdgeCost(f"no cost matrix for edge ({a}, {b})")


def assemble_cost_tensor(tree: Tree, edge_costs, sizes=None) -> np.ndarray:
    """Sum of edge costs broadcast into a ``J``-mode tensor.

    ``edge_costs`` maps an edge ``(a, b)`` (either orientation) to an
    ``n_a x n_b`` matrix. ``sizes`` is only needed for a single-node tree.
    """
    J = tree.node_count
    shape = [0] * J
    if sizes:
        for j, n in dict(sizes).items():
            shape[j - 1] = int(n)
    mats = []
    for a, b in tree.edges:
        C = _edge_matrix(edge_costs, a, b)
        for j, n in ((a, C.shape[0]), (b, C.shape[1])):
            if shape[j - 1] not in (0, n):
                raise ShapeMismatch(f"node {j} has size {shape[j - 1]} and {n} on different edges")
            shape[j - 1] = n
        mats.append((a, b, C))
    if 0 in shape:
        raise ShapeMismatch("node sizes are undetermined; pass sizes=")
    _check_size(shape)
    out = np.zeros(shape)
    for a, b, C in mats:
        view = [1] * J
        view[a - 1], view[b - 1] = C.shape
        # reshape assumes a < b; transpose otherwise
        out = out + (C if a < b else C.T).reshape(view)
    return out


def _mode(tensor: np.ndarray, j: int) -> int:
    if not 1 <= j <= tensor.ndim:
        raise ModeOutOfRange(f"mode {j} not in 1..{tensor.ndim}")
    return j - 1


def project(tensor, j: int) -> np.ndarray:
    """Marginal on mode ``j`` (1-based): sum over every other mode."""
    tensor = np.asarray(tensor, dtype=float)
    ax = _mode(tensor, j)
    others = tuple(k for k in range(tensor.ndim) if k != ax)
    return tensor.sum(axis=others)


def project_pair(tensor, j1: int, j2: int) -> np.ndarray:
    """Bi-marginal on modes ``(j1, j2)`` with ``j1`` indexing rows."""
    tensor = np.asarray(tensor, dtype=float)
    a, b = _mode(tensor, j1), _mode(tensor, j2)
    if a == b:
        raise EqualModes(f"modes must differ, got {j1} twice")
    others = tuple(k for k in range(tensor.ndim) if k not in (a, b))
    out = tensor.sum(axis=others)
    return out if a < b else out.T


@dataclass
class TensorProblem:
    cost: np.ndarray
    epsilon: float
    constraints: dict[int, np.ndarray]

    @classmethod
    def from_tree(cls, tree, edge_costs, epsilon, constraints, sizes=None):
        if sizes is None:
            sizes = {j: len(m) for j, m in constraints.items()}
        return cls(assemble_cost_tensor(tree, edge_costs, sizes), float(epsilon), dict(constraints))


@dataclass
class DenseSolution:
    tensor: np.ndarray
    scalings: dict[int, np.ndarray]
    sweeps: int
    residual: float
    converged: bool
    dual_history: list[float] = field(default_factory=list)


def _scaling_tensor(scalings, shape):
    U = np.ones(shape)
    for j, u in scalings.items():
        view = [1] * len(shape)
        view[j - 1] = shape[j - 1]
        U = U * u.reshape(view)
    return U


def dense_dual(kernel, scalings, constraints, epsilon) -> float:
    """Dual value ``-eps <K, U> + sum_j lambda_j . mu_j`` with ``u = exp(lambda/eps)``."""
    U = _scaling_tensor(scalings, kernel.shape)
    val = -epsilon * float(np.sum(kernel * U))
    for j, mu in constraints.items():
        u = scalings[j]
        pos = mu > 0
        val += epsilon * float(np.sum(mu[pos] * np.log(u[pos])))
    return val


def dense_sinkhorn(problem: TensorProblem, tol: float = 1e-8, max_sweeps: int = 10000) -> DenseSolution:
    """Cyclic Sinkhorn scaling on the full tensor.

    Constraint masses are normalized before iterating and the returned tensor
    is rescaled by the common mass.
    """
    if not problem.constraints:
        raise NoConstraints("no constrained modes")
    C = np.asarray(problem.cost, dtype=float)
    _check_size(C.shape)
    modes = sorted(problem.constraints)
    for j in modes:
        _mode(C, j)
        if len(problem.constraints[j]) != C.shape[j - 1]:
            raise ShapeMismatch(f"marginal {j} has length {len(problem.constraints[j])}, mode size {C.shape[j - 1]}")
    normed, mass = check_mass_balance([problem.constraints[j] for j in modes])
    mu = dict(zip(modes, normed))
    eps = problem.epsilon
    K = np.exp(-C / eps)
    u = {j: np.ones(C.shape[j - 1]) for j in modes}
    duals = []
    residual = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for j in modes:
            P = project(K * _scaling_tensor(u, C.shape), j)
            with np.errstate(divide="ignore", invalid="ignore"):
                u[j] = np.where(mu[j] > 0, u[j] * mu[j] / P, 0.0)
        M = K * _scaling_tensor(u, C.shape)
        residual = max(float(np.abs(project(M, j) - mu[j]).sum()) for j in modes)
        duals.append(dense_dual(K, u, mu, eps))
        if residual <= tol:
            break
    M = K * _scaling_tensor(u, C.shape)
    sol = DenseSolution(M * mass, u, sweeps, residual, residual <= tol, duals)
    if not sol.converged:
        raise MaxSweepsExceeded(f"dense Sinkhorn stopped at residual {residual:.3e}", sol)
    return sol


def dense_objective(tensor, cost, epsilon) -> float:
    """``<C, M> + eps * H(M)`` evaluated entry by entry."""
    M = np.asarray(tensor, dtype=float)
    C = np.asarray(cost, dtype=float)
    if M.shape != C.shape:
        raise ShapeMismatch(f"tensor {M.shape} vs cost {C.shape}")
    pos = M > 0
    return float(np.sum(M[pos] * C[pos])) + epsilon * neg_entropy(M.ravel())


def feasibility_check(pair_marginals, sizes=None) -> bool:
    """Decide whether some nonnegative tensor has the given bi-marginals.

    ``pair_marginals`` maps node pairs ``(a, b)`` to ``n_a x n_b`` matrices on
    any graph (cycles allowed). Solved as a linear feasibility problem over
    all tensor entries.
    """
    sizes = dict(sizes or {})
    for (a, b), P in pair_marginals.items():
        P = np.asarray(P)
        for j, n in ((a, P.shape[0]), (b, P.shape[1])):
            if sizes.setdefault(j, n) != n:
                raise ShapeMismatch(f"node {j} has inconsistent sizes")
    labels = sorted(sizes)
    axis = {j: i for i, j in enumerate(labels)}
    shape = tuple(sizes[j] for j in labels)
    _check_size(shape)
    total = int(np.prod(shape))
    flat = np.arange(total).reshape(shape)
    rows, cols, rhs = [], [], []
    offset = 0
    for (a, b), P in sorted(pair_marginals.items()):
        P = np.asarray(P, dtype=float)
        idx = np.moveaxis(flat, (axis[a], axis[b]), (0, 1)).reshape(shape[axis[a]], shape[axis[b]], -1)
        for i, k in itertools.product(range(P.shape[0]), range(P.shape[1])):
            entries = idx[i, k]
            rows.extend([offset] * len(entries))
            cols.extend(entries.tolist())
            rhs.append(P[i, k])
            offset += 1
    A_eq = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(offset, total))
    res = linprog(np.zeros(total), A_eq=A_eq, b_eq=np.array(rhs), bounds=(0, None), method="highs")
    return res.status == 0
