import numpy as np
import pytest

from treeot.graph import validate_tree
from treeot.solver import TreeOTProblem

FOUR_NODE_EDGES = [(1, 2), (2, 3), (1, 4)]


def random_tree(rng, J):
    """Uniform attachment: node ``k`` hangs off a random earlier node."""
    edges = [(int(rng.integers(1, k)), k) for k in range(2, J + 1)]
    return validate_tree(J, edges)


def random_marginal(rng, n, mass=1.0):
    m = rng.uniform(0.1, 1.0, n)
    return m / m.sum() * mass


def random_stochastic(rng, n, m=None):
    A = rng.uniform(0.05, 1.0, (n, n if m is None else m))
    return A / A.sum(axis=1, keepdims=True)


def random_problem(rng, J, n, epsilon=1.0, constrained=None, sizes=None):
    tree = random_tree(rng, J)
    sizes = sizes or {j: n for j in tree.nodes}
    costs = {(a, b): rng.uniform(0.0, 1.0, (sizes[a], sizes[b])) for a, b in tree.edges}
    if constrained is None:
        constrained = tree.leaves() if J > 1 else [1]
    marg = {j: random_marginal(rng, sizes[j]) for j in constrained}
    return TreeOTProblem(tree, costs, epsilon, marg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def four_node_tree():
    return validate_tree(4, FOUR_NODE_EDGES)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
