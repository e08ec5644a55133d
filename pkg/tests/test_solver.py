import math
import warnings

import numpy as np
import pytest

from treeot.errors import (
    EpsilonNonPositive,
    MassMismatch,
    MaxSweepsExceeded,
    MissingEdgeCost,
    NoConstraints,
    NotConverged,
    ShapeMismatch,
)
from treeot.graph import validate_tree
from treeot.numerics import euclidean_cost, neg_entropy
from treeot.oracle import TensorProblem, dense_objective, dense_sinkhorn, project, project_pair
from treeot.solver import (
    TreeOTProblem,
    extract_marginal,
    extract_plan,
    preprocess,
    primal_objective,
    solve,
    summarize,
)

from conftest import FOUR_NODE_EDGES, random_marginal, random_problem

X = np.array([[0.0, 1.0], [1.0, 0.0]])


def oracle_solution(problem, tol=1e-13):
    tp = TensorProblem.from_tree(problem.tree, problem.edge_costs, problem.epsilon,
                                 problem.constraints, problem.sizes)
    return dense_sinkhorn(tp, tol=tol, max_sweeps=100000), tp


def path(J):
    return validate_tree(J, [(j, j + 1) for j in range(1, J)])


class TestProblem:
    def test_validation(self, rng):
        t = path(2)
        with pytest.raises(EpsilonNonPositive):
            TreeOTProblem(t, {(1, 2): X}, 0.0, {1: [1, 1]})
        with pytest.raises(EpsilonNonPositive):
            TreeOTProblem(t, {(1, 2): X}, "abc", {1: [1, 1]})
        with pytest.raises(MissingEdgeCost):
            TreeOTProblem(path(3), {(1, 2): X}, 1.0, {1: [1, 1]})
        with pytest.raises(ShapeMismatch):
            TreeOTProblem(t, {(1, 2): X}, 1.0, {1: [1, 1, 1]})
        with pytest.raises(NoConstraints):
            solve(TreeOTProblem(t, {(1, 2): X}, 1.0, {}))
        with pytest.raises(MassMismatch):
            solve(TreeOTProblem(t, {(1, 2): X}, 1.0, {1: [1, 1], 2: [1, 2]}))

    def test_reversed_cost_key(self, rng):
        C = rng.uniform(size=(2, 3))
        a = TreeOTProblem(path(2), {(2, 1): C.T}, 1.0, {1: [.5, .5], 2: [.2, .3, .5]})
        np.testing.assert_array_equal(a.cost(1, 2), C)
        np.testing.assert_array_equal(a.cost(2, 1), C.T)


class TestPreprocess:
    def costs(self, J, rng):
        return {(j, j + 1): rng.uniform(size=(2, 2)) for j in range(1, J)}

    def test_internal_constraint_splits(self, rng):
        p = TreeOTProblem(path(3), self.costs(3, rng), 1.0, {j: [.5, .5] for j in (1, 2, 3)})
        pieces = preprocess(p)
        assert [s.nodes for s in pieces] == [(1, 2), (2, 3)]
        assert all(s.problem.tree.node_count == 2 for s in pieces)

    def test_leaf_constraints_unchanged(self, rng):
        p = TreeOTProblem(path(3), self.costs(3, rng), 1.0, {1: [.5, .5], 3: [.3, .7]})
        (piece,) = preprocess(p)
        assert piece.nodes == (1, 2, 3)
        assert not piece.log_weights

    def test_pruned_leaf_matches_oracle(self, rng):
        p = TreeOTProblem(path(3), self.costs(3, rng), 0.7, {1: [.4, .6], 2: [.3, .7]})
        (piece,) = preprocess(p)
        assert piece.nodes == (1, 2)
        np.testing.assert_allclose(np.exp(piece.log_weights[2]), np.exp(-p.cost(2, 3) / 0.7) @ np.ones(2))
        rep = solve(p, tol=1e-12)
        sol, _ = oracle_solution(p)
        for j in (1, 2, 3):
            np.testing.assert_allclose(extract_marginal(rep, p, j), project(sol.tensor, j), atol=1e-9)


class TestSolve:
    def test_closed_form(self):
        p = TreeOTProblem(path(2), {(1, 2): X}, 1.0, {1: [.5, .5], 2: [.5, .5]})
        rep = solve(p, tol=1e-13)
        e = math.e
        a, b = e / (2 * (1 + e)), 1 / (2 * (1 + e))
        np.testing.assert_allclose(extract_plan(rep, p, 1, 2), [[a, b], [b, a]], atol=1e-12)

    def test_bimarginal_form(self, rng):
        C = rng.uniform(size=(3, 2))
        p = TreeOTProblem(path(2), {(1, 2): C}, 0.5, {1: [1, 2, 3], 2: [4, 2]})
        rep = solve(p)
        u1, u2 = rep.scaling.u[1], rep.scaling.u[2]
        want = u1[:, None] * np.exp(-C / 0.5) * u2[None, :] * rep.mass
        np.testing.assert_allclose(extract_plan(rep, p, 1, 2), want, rtol=1e-12)
        assert rep.mass == pytest.approx(6.0)

    def test_four_node_against_oracle(self, rng, four_node_tree):
        sizes = {1: 2, 2: 3, 3: 2, 4: 3}
        costs = {(a, b): rng.uniform(size=(sizes[a], sizes[b])) for a, b in FOUR_NODE_EDGES}
        p = TreeOTProblem(four_node_tree, costs, 0.5, {3: random_marginal(rng, 2), 4: random_marginal(rng, 3)})
        rep = solve(p, tol=1e-12)
        sol, tp = oracle_solution(p)
        for j in four_node_tree.nodes:
            assert np.abs(extract_marginal(rep, p, j) - project(sol.tensor, j)).sum() <= 1e-6
        for a, b in four_node_tree.edges:
            assert np.abs(extract_plan(rep, p, a, b) - project_pair(sol.tensor, a, b)).sum() <= 1e-6
        assert primal_objective(rep, p) == pytest.approx(dense_objective(sol.tensor, tp.cost, 0.5), abs=1e-8)

    def test_constraints_met(self, rng):
        p = random_problem(rng, 5, 3, epsilon=0.5)
        rep = solve(p, tol=1e-9)
        for j, m in p.constraints.items():
            assert np.abs(extract_marginal(rep, p, j) - m).sum() <= 1e-9 * 1.01

    def test_gaussian_path(self):
        x = np.linspace(0, 1, 100)
        m1 = np.exp(-((x - 0.2) / 0.1) ** 2)
        m6 = np.exp(-((x - 0.8) / 0.1) ** 2)
        C = euclidean_cost(x)
        p = TreeOTProblem(path(6), {(j, j + 1): C for j in range(1, 6)}, 1e-2, {1: m1 / m1.sum(), 6: m6 / m6.sum()})
        rep = solve(p)
        assert rep.residual <= 1e-8
        means = [float(x @ extract_marginal(rep, p, j)) for j in range(1, 7)]
        assert np.all(np.diff(means) > 0)

    def test_reversal_symmetry(self, rng):
        C = rng.uniform(size=(3, 3))
        C = C + C.T
        m = random_marginal(rng, 3)
        p = TreeOTProblem(path(4), {(j, j + 1): C for j in range(1, 4)}, 0.4, {1: m, 4: m})
        rep = solve(p, tol=1e-12)
        np.testing.assert_allclose(extract_marginal(rep, p, 2), extract_marginal(rep, p, 3), atol=1e-10)
        np.testing.assert_allclose(extract_plan(rep, p, 1, 2), extract_plan(rep, p, 4, 3), atol=1e-10)

    def test_dual_nondecreasing(self, rng):
        for seed in range(10):
            p = random_problem(np.random.default_rng(seed), 5, 3, epsilon=0.3)
            rep = solve(p, tol=1e-11)
            assert np.all(np.diff(rep.dual_history) >= -1e-12)

    def test_linear_convergence(self, rng):
        p = random_problem(rng, 5, 4, epsilon=0.1)
        rep = solve(p, tol=1e-14, max_sweeps=5000)
        ratios = rep.contraction_ratios()
        assert len(ratios) >= 5
        assert max(ratios[-5:]) <= 0.999

    def test_scaling_class_invariance(self, rng):
        p = random_problem(rng, 4, 3, epsilon=0.5)
        rep = solve(p)
        before = {e: extract_plan(rep, p, *e) for e in p.tree.edges}
        a, b = sorted(p.constraints)[:2]
        rep.scaling.u[a] = rep.scaling.u[a] * 3.7
        rep.scaling.u[b] = rep.scaling.u[b] / 3.7
        rep.scaling.dirty = set(p.tree.directed_edges())
        for e, M in before.items():
            np.testing.assert_allclose(extract_plan(rep, p, *e), M, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_decomposition(self, seed):
        rng = np.random.default_rng(seed)
        p = random_problem(rng, 5, 2, epsilon=0.5, constrained=[1, 2, 3, 4, 5])
        internal = [j for j in p.tree.nodes if p.tree.degree(j) > 1]
        constrained = list(p.tree.leaves()) + internal[:1]
        p = p.with_constraints({j: random_marginal(rng, 2) for j in constrained})
        rep = solve(p, tol=1e-12)
        sol, _ = oracle_solution(p)
        for j in p.tree.nodes:
            assert np.abs(extract_marginal(rep, p, j) - project(sol.tensor, j)).sum() <= 1e-6

    def test_heterogeneous_sizes(self, rng):
        p = random_problem(rng, 4, 0, epsilon=0.5, sizes={1: 2, 2: 4, 3: 3, 4: 2})
        rep = solve(p, tol=1e-12)
        sol, _ = oracle_solution(p)
        for a, b in p.tree.edges:
            np.testing.assert_allclose(extract_plan(rep, p, a, b), project_pair(sol.tensor, a, b), atol=1e-9)

    def test_log_domain_agrees(self, rng):
        p = random_problem(rng, 5, 3, epsilon=0.2)
        a = solve(p, tol=1e-12, log_domain="off")
        b = solve(p, tol=1e-12, log_domain="on")
        assert not a.log_domain and b.log_domain
        for j in p.tree.nodes:
            np.testing.assert_allclose(extract_marginal(a, p, j), extract_marginal(b, p, j), atol=1e-11)

    def test_auto_falls_back_to_log(self):
        x = np.linspace(0, 1, 30)
        C = euclidean_cost(x)
        m = np.ones(30) / 30
        p = TreeOTProblem(path(3), {(1, 2): C, (2, 3): C}, 1e-3, {1: m, 3: m[::-1]})
        rep = solve(p, tol=1e-9)
        assert rep.log_domain
        assert rep.residual <= 1e-9

    def test_zero_mass_bins(self):
        p = TreeOTProblem(path(2), {(1, 2): X}, 1.0, {1: [1.0, 0.0], 2: [.5, .5]})
        rep = solve(p, tol=1e-12)
        np.testing.assert_allclose(extract_plan(rep, p, 1, 2), [[.5, .5], [0, 0]], atol=1e-12)

    def test_max_sweeps(self, rng):
        p = random_problem(rng, 4, 3, epsilon=0.05)
        with pytest.raises(MaxSweepsExceeded) as info:
            solve(p, max_sweeps=2)
        rep = info.value.report
        assert rep.sweeps == 2 and not rep.converged
        with pytest.warns(NotConverged):
            extract_marginal(rep, p, 1)


class TestObjective:
    def test_two_nodes_direct(self, rng):
        C = rng.uniform(size=(2, 3))
        p = TreeOTProblem(path(2), {(1, 2): C}, 0.7, {1: [.5, .5], 2: [.2, .3, .5]})
        rep = solve(p, tol=1e-12)
        M = extract_plan(rep, p, 1, 2)
        assert primal_objective(rep, p) == pytest.approx(np.sum(C * M) + 0.7 * neg_entropy(M), rel=1e-12)

    def test_path_against_oracle(self, rng):
        p = TreeOTProblem(path(3), {(1, 2): rng.uniform(size=(2, 2)), (2, 3): rng.uniform(size=(2, 2))},
                          0.8, {1: [.3, .7], 3: [.6, .4]})
        rep = solve(p, tol=1e-12)
        sol, tp = oracle_solution(p)
        assert primal_objective(rep, p) == pytest.approx(dense_objective(sol.tensor, tp.cost, 0.8), abs=1e-9)

    def test_zero_cost_product(self):
        t = validate_tree(4, FOUR_NODE_EDGES)
        zeros = {e: np.zeros((2, 2)) for e in FOUR_NODE_EDGES}
        p = TreeOTProblem(t, zeros, 1.5, {3: [.5, .5], 4: [.5, .5]})
        sol = summarize(solve(p), p)
        product = np.full((2, 2, 2, 2), 1 / 16)
        assert sol.objective == pytest.approx(1.5 * neg_entropy(product), rel=1e-10)
        for j in t.nodes:
            np.testing.assert_allclose(sol.mu[j], [.5, .5])
