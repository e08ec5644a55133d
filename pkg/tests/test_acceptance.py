"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from treeot import ensemble as ens
from treeot.bridge import MarkovTreeProblem, bridge_objective, bridge_sinkhorn, reroot_problem
from treeot.errors import ConvergenceError
from treeot.graph import leaves, path_between, root_at, validate_tree
from treeot.numerics import euclidean_cost, shannon_entropy
from treeot.oracle import TensorProblem, dense_sinkhorn, project, project_pair
from treeot.pairwise import cycle_counterexample, pairwise_solve
from treeot.projections import ScalingState
from treeot.projections import project_marginal as mp_marginal
from treeot.projections import project_pair as mp_pair
from treeot.solver import TreeOTProblem, extract_marginal, extract_plan, solve, summarize

from conftest import random_marginal, random_problem, random_stochastic, random_tree, record_criterion

pytestmark = pytest.mark.acceptance

BRIDGE_OBJECTIVE_GAPS = []


def path(J):
    return validate_tree(J, [(j, j + 1) for j in range(1, J)])


def dense_solution(problem, tol=1e-13):
    tp = TensorProblem.from_tree(problem.tree, problem.edge_costs, problem.epsilon,
                                 problem.constraints, problem.sizes)
    return dense_sinkhorn(tp, tol=tol, max_sweeps=100000)


def random_bridge(rng, J, n_max=4):
    tree = random_tree(rng, J)
    sizes = {j: int(rng.integers(2, n_max + 1)) for j in tree.nodes}
    lv = leaves(tree)
    rt = root_at(tree, lv[0])
    trans = {(p, c): random_stochastic(rng, sizes[p], sizes[c]) for p, c in rt.edges}
    return MarkovTreeProblem(rt, trans, {j: random_marginal(rng, sizes[j]) for j in lv})


def solve_bridge(problem, **kw):
    sol = bridge_sinkhorn(problem, **kw)
    if sol.converged:
        obj = bridge_objective(problem, sol)
        BRIDGE_OBJECTIVE_GAPS.append(abs(obj.conditional - obj.unconditional))
    return sol


def test_criterion_01_oracle_equivalence():
    start = time.perf_counter()
    worst_proj = worst_marg = worst_plan = 0.0
    count = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        J, n = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        eps = float(rng.choice([0.1, 1.0]))
        p = random_problem(rng, J, n, epsilon=eps)
        tree = p.tree

        # projections under random scalings
        state = ScalingState.initial(tree, p.sizes, tree.nodes)
        state.u = {j: rng.uniform(0.2, 2.0, p.sizes[j]) for j in tree.nodes}
        K = p.kernels(False)
        tp = TensorProblem.from_tree(tree, p.edge_costs, eps, p.constraints, p.sizes)
        T = np.exp(-tp.cost / eps)
        for j, v in state.u.items():
            shape = [1] * J
            shape[j - 1] = len(v)
            T = T * v.reshape(shape)
        for j in tree.nodes:
            ref = project(T, j)
            worst_proj = max(worst_proj, np.max(np.abs(mp_marginal(state, tree, K, j) - ref) / np.abs(ref)))
        for a, b in tree.edges:
            ref = project_pair(T, a, b)
            worst_proj = max(worst_proj, np.max(np.abs(mp_pair(state, tree, K, a, b) - ref) / np.abs(ref)))

        # full solves
        rep = solve(p, tol=1e-12, max_sweeps=100000)
        dense = dense_solution(p)
        for j in tree.nodes:
            worst_marg = max(worst_marg, np.abs(extract_marginal(rep, p, j) - project(dense.tensor, j)).sum())
        for a, b in tree.edges:
            worst_plan = max(worst_plan, np.abs(extract_plan(rep, p, a, b) - project_pair(dense.tensor, a, b)).sum())
        count += 1
    elapsed = time.perf_counter() - start
    ok = worst_proj <= 1e-10 and worst_marg <= 1e-6 and worst_plan <= 1e-6 and elapsed < 120
    assert record_criterion(1, ok, f"{count} instances, projection rel err {worst_proj:.1e}, "
                                   f"marginal L1 {worst_marg:.1e}, plan L1 {worst_plan:.1e}, {elapsed:.1f}s")


def test_criterion_02_bridge_equals_transport():
    worst = 0.0
    worst_gauge = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        bp = random_bridge(rng, int(rng.integers(2, 7)))
        sol = solve_bridge(bp, tol=1e-12)
        ot = TreeOTProblem.from_kernels(bp.rooted.base, bp.transitions, bp.leaf_marginals, 1.0)
        rep = solve(ot, tol=1e-12)
        for j in bp.rooted.order:
            worst = max(worst, np.abs(sol.mu[j] - extract_marginal(rep, ot, j)).sum())
        for (a, b), M in sol.plans.items():
            worst = max(worst, np.abs(M - extract_plan(rep, ot, a, b)).sum())
        # u_root = c / v_root and u_j = c v_j at the other constrained leaves
        ratios = [rep.scaling.u[bp.root] * sol.v[bp.root]]
        ratios += [rep.scaling.u[j] / sol.v[j] for j in bp.leaf_marginals if j != bp.root]
        c = ratios[0][0]
        worst_gauge = max(worst_gauge, max(np.max(np.abs(r / c - 1)) for r in ratios))
    ok = worst <= 1e-8 and worst_gauge <= 1e-6
    assert record_criterion(2, ok, f"100 instances, max L1 {worst:.1e}, scaling gauge spread {worst_gauge:.1e}")


def test_criterion_03_root_independence():
    worst_mu = worst_plan = 0.0
    tried = 0
    for seed in range(60):
        rng = np.random.default_rng(2000 + seed)
        bp = random_bridge(rng, int(rng.integers(3, 7)))
        other = [j for j in bp.leaf_marginals if j != bp.root]
        if not other:
            continue
        tried += 1
        new = other[0]
        a = solve_bridge(bp, tol=1e-12)
        b = solve_bridge(reroot_problem(bp, new), tol=1e-12)
        for j in bp.rooted.order:
            worst_mu = max(worst_mu, np.abs(a.mu[j] - b.mu[j]).sum())
        route = path_between(bp.rooted.base, bp.root, new)
        for x, y in zip(route, route[1:]):
            worst_plan = max(worst_plan, np.abs(b.plans[(y, x)] - a.plans[(x, y)].T).sum())
    ok = tried >= 20 and worst_mu <= 1e-8 and worst_plan <= 1e-8
    assert record_criterion(3, ok, f"{tried} rerooted instances, marginal L1 {worst_mu:.1e}, "
                                   f"reversed plan L1 {worst_plan:.1e}")


def test_criterion_04_decomposition():
    worst = 0.0
    count = 0
    for seed in range(40):
        rng = np.random.default_rng(3000 + seed)
        J = int(rng.integers(3, 6))
        p = random_problem(rng, J, int(rng.integers(2, 4)), epsilon=float(rng.choice([0.3, 1.0])))
        internal = [j for j in p.tree.nodes if p.tree.degree(j) > 1]
        picked = list(rng.choice(internal, size=min(len(internal), int(rng.integers(1, 3))), replace=False))
        marg = dict(p.constraints)
        marg.update({int(j): random_marginal(rng, p.sizes[int(j)]) for j in picked})
        p = p.with_constraints(marg)
        rep = solve(p, tol=1e-12)
        dense = dense_solution(p)
        for j in p.tree.nodes:
            worst = max(worst, np.abs(extract_marginal(rep, p, j) - project(dense.tensor, j)).sum())
        for a, b in p.tree.edges:
            worst = max(worst, np.abs(extract_plan(rep, p, a, b) - project_pair(dense.tensor, a, b)).sum())
        count += 1
    assert record_criterion(4, worst <= 1e-6, f"{count} split instances, max L1 vs oracle {worst:.1e}")


def test_criterion_05_objective_identity():
    # covers every converged bridge solution produced by criteria 2 and 3, plus a fresh batch
    for seed in range(30):
        rng = np.random.default_rng(4000 + seed)
        solve_bridge(random_bridge(rng, int(rng.integers(2, 8))), tol=1e-12)
    worst = max(BRIDGE_OBJECTIVE_GAPS)
    ok = worst <= 1e-9
    assert record_criterion(5, ok, f"{len(BRIDGE_OBJECTIVE_GAPS)} bridge solutions, "
                                   f"max objective form gap {worst:.1e}")


def test_criterion_06_cycle():
    rep = cycle_counterexample()
    ok = (rep.pairwise_value == 0.0 and abs(rep.pairwise_lp_value) <= 1e-12 and not rep.feasible
          and rep.min_cost_entry == 1.0 and rep.multi_lower_bound == 2.0
          and rep.multi_lp_value >= 2.0 - 1e-12)
    assert record_criterion(6, ok, f"pairwise {rep.pairwise_value}, LP {rep.pairwise_lp_value:.1e}, "
                                   f"feasible {rep.feasible}, joint lower bound {rep.multi_lower_bound}")


def gaussian_chain(width, eps, n=100, J=6):
    x = np.linspace(0, 1, n)
    C = euclidean_cost(x)

    def bump(c):
        v = np.exp(-((x - c) / width) ** 2)
        return v / v.sum()

    return TreeOTProblem(path(J), {(j, j + 1): C for j in range(1, J)}, eps, {1: bump(0.2), J: bump(0.8)})


def entropy_comparison(width):
    rows = []
    for eps in (1e-2, 5e-3, 1e-3, 5e-4):
        p = gaussian_chain(width, eps)
        try:
            pw = pairwise_solve(p, log_domain="off")
        except ConvergenceError as exc:
            rows.append((eps, None, type(exc).__name__))
            continue
        multi = summarize(solve(p, max_sweeps=20000), p)
        gaps = [shannon_entropy(pw.mu[j]) - shannon_entropy(multi.mu[j]) for j in range(2, 6)]
        rows.append((eps, gaps, None))
    return rows


def test_criterion_07_entropy_comparison():
    start = time.perf_counter()
    rows = entropy_comparison(10.0)
    compared = [r for r in rows if r[1] is not None]
    ok = bool(compared) and all(min(g) >= 0 and max(g) >= 1e-6 for _, g, _ in compared)
    detail = "; ".join(f"eps {e:g}: " + (f"min gap {min(g):.2e} max gap {max(g):.2e}" if g else f"pairwise {why}")
                       for e, g, why in rows)
    # narrower endpoints, where pairwise converges at more values of eps
    extra = entropy_comparison(0.1)
    ok_extra = all(min(g) >= 0 and max(g) >= 1e-6 for _, g, _ in extra if g is not None)
    detail += f" | width 0.1: {sum(g is not None for _, g, _ in extra)} eps compared, holds {ok_extra}"
    detail += f" | {time.perf_counter() - start:.1f}s"
    assert record_criterion(7, ok and ok_extra, detail)


def test_criterion_08_pairwise_fragility():
    m, J = 10, 6
    g = (np.arange(m) + 0.5) / m
    X, Y = np.meshgrid(g, g)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    C = euclidean_cost(pts)

    def blob(c):
        v = np.exp(-((pts - np.asarray(c)) ** 2).sum(axis=1) / 0.15**2)
        return v / v.sum()

    notes = []
    manifested = False
    for eps in (1e-3, 5e-4):
        p = TreeOTProblem(path(J), {(j, j + 1): C for j in range(1, J)}, eps,
                          {1: blob((0.2, 0.2)), J: blob((0.8, 0.7))})
        try:
            pw = pairwise_solve(p, log_domain="off", max_sweeps=10000)
            pair = f"converged in {pw.sweeps}"
            failed = False
        except ConvergenceError as exc:
            cause = type(exc.__cause__).__name__ if exc.__cause__ else type(exc).__name__
            pair = f"failed ({cause})"
            failed = True
        rep = solve(p, max_sweeps=10000)
        manifested |= failed and rep.converged
        notes.append(f"eps {eps:g}: pairwise {pair}, multi converged {rep.converged} in {rep.sweeps}")
    # reported, not asserted
    record_criterion(8, manifested, f"{m}x{m} grid, J={J}: " + "; ".join(notes))


def test_criterion_09_linear_convergence():
    # fast instances reach the tolerance in a handful of sweeps; their
    # available ratios are checked as well
    worst = 0.0
    full = 0
    for seed in range(10):
        rng = np.random.default_rng(5000 + seed)
        p = random_problem(rng, int(rng.integers(3, 7)), int(rng.integers(2, 5)), epsilon=0.05)
        rep = solve(p, tol=1e-14, max_sweeps=20000)
        ratios = rep.contraction_ratios()
        assert rep.converged and ratios
        full += len(ratios) >= 5
        worst = max(worst, max(ratios[-5:]))
    assert record_criterion(9, worst <= 0.999 and full >= 5,
                            f"10 instances ({full} with five or more ratios), "
                            f"largest final ratio {worst:.3f}")


def test_criterion_10_ensemble_trend():
    start = time.perf_counter()
    net = ens.grid_network(*ens.DESK_GRID)
    prior = ens.plan_prior(net, ens.DESK_SOURCE, ens.DESK_SINK, ens.DESK_TAU)
    first = np.zeros(net.n)
    first[ens.DESK_SOURCE - 1] = 1.0
    tol = 1e-8
    means, worst = {}, 0.0
    for kind in ("uncoupled", "coupled"):
        model = ens.ObservationModel.make(kind, net, ens.DESK_SENSORS)
        for N in (10, 100, 1000):
            errs = []
            for seed in range(10):
                inst = ens.simulate(prior.stochastic, first, N, model, seed=seed)
                est = ens.estimate(ens.build_hmt_problem(inst.observations, prior.stochastic, model), tol=tol)
                errs.append(ens.estimation_error(est, inst, net))
                worst = max(worst, np.abs(est.mu.sum(axis=1) - N).max() / N)
                for t, F in enumerate(est.flows):
                    worst = max(worst, np.abs(F.sum(axis=1) - est.mu[t]).sum() / N,
                                np.abs(F.sum(axis=0) - est.mu[t + 1]).sum() / N)
                for (t, s), M in est.observation_plans.items():
                    worst = max(worst, np.abs(M.sum(axis=0) - inst.observations[t - 1, s]).sum() / N)
            means[(kind, N)] = float(np.mean(errs))
    trend = all(means[(k, 10)] >= means[(k, 100)] >= means[(k, 1000)] for k in ("uncoupled", "coupled"))
    elapsed = time.perf_counter() - start
    ok = trend and worst <= tol and elapsed < 300
    table = ", ".join(f"{k} " + "/".join(f"{means[(k, N)]:.3f}" for N in (10, 100, 1000))
                      for k in ("uncoupled", "coupled"))
    assert record_criterion(10, ok, f"mean EMD at N=10/100/1000: {table}; "
                                    f"worst invariant violation / N {worst:.1e}; {elapsed:.0f}s")


def test_criterion_11_determinism(tmp_path):
    x = np.linspace(0, 1, 8)
    doc = {
        "schema_version": 1,
        "nodes": [{"id": j, "positions": x.tolist()} for j in range(1, 4)],
        "edges": [{"nodes": [1, 2], "cost": "euclidean"}, {"nodes": [2, 3], "cost": "euclidean"}],
        "epsilon": 0.1,
        "marginals": {"1": (np.ones(8) / 8).tolist(), "3": (np.arange(1, 9) / 36).tolist()},
    }
    prob = tmp_path / "p.json"
    prob.write_text(json.dumps(doc))
    sim = tmp_path / "sim.json"
    commands = [[c, str(prob)] for c in ("solve", "bridge", "pairwise", "compare", "oracle")]
    commands.append(["ensemble", "simulate", "-N", "40", "--seed", "3"])
    commands.append(["ensemble", "estimate", str(sim)])
    subprocess.run([sys.executable, "-m", "treeot", "ensemble", "simulate", "-N", "40", "--seed", "3",
                    "--output", str(sim)], check=True)
    same = []
    for cmd in commands:
        outs = [subprocess.run([sys.executable, "-m", "treeot", *cmd], capture_output=True, check=True).stdout
                for _ in range(2)]
        same.append(outs[0] == outs[1] and len(outs[0]) > 0)
    names = [" ".join(c[:2]) if c[0] == "ensemble" else c[0] for c in commands]
    assert record_criterion(11, all(same), ", ".join(f"{n} {'identical' if s else 'DIFFERS'}"
                                                     for n, s in zip(names, same)))
