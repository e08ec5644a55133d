"""Command-line front end.

Problem files are JSON (``schema_version`` 1). Node labels may be strings or
integers; they are mapped to ``1..J`` in the order listed. Results are
written as JSON with sorted keys so that identical inputs, seed and version
give identical bytes; the ensemble estimate is written as CSV.

Exit codes: 0 success, 1 invalid input or schema, 2 numerical failure
(including problems too large for the dense oracle), 3 no convergence
(a partial result with the iteration log is still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np
from scipy.spatial.distance import cdist

from . import __version__
from . import ensemble as ens
from .bridge import bridge_objective, bridge_sinkhorn, ot_to_bridge
from .errors import ConvergenceError, InvalidInput, NumericalError, TreeOTError
from .graph import leaves, validate_tree
from .oracle import TensorProblem, dense_objective, dense_sinkhorn, project, project_pair
from .numerics import euclidean_cost
from .pairwise import entropy_gap, pairwise_solve
from .solver import TreeOTProblem, solve, summarize

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_CONVERGENCE = 0, 1, 2, 3

_label = {"type": ["string", "integer"]}
_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}}

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "nodes", "edges"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": 1},
        "nodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id"],
                "additionalProperties": False,
                "properties": {
                    "id": _label,
                    "positions": {"type": "array", "minItems": 1,
                                  "items": {"type": ["number", "array"], "items": {"type": "number"}}},
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["nodes", "cost"],
                "additionalProperties": False,
                "properties": {
                    "nodes": {"type": "array", "minItems": 2, "maxItems": 2, "items": _label},
                    "cost": {"oneOf": [_matrix, {"enum": ["euclidean", "neg_log_stochastic"]}]},
                    "matrix": _matrix,
                },
            },
        },
        "epsilon": {"oneOf": [
            {"type": "number", "exclusiveMinimum": 0},
            {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        ]},
        "marginals": {"type": "object", "additionalProperties": _vector},
        "mode": {"enum": ["multi", "pairwise", "bridge"]},
        "root": _label,
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_sweeps": {"type": "integer", "minimum": 1},
                "log_domain": {"enum": ["auto", "on", "off"]},
                "seed": {"type": "integer"},
            },
        },
    },
}

ENSEMBLE_SCHEMA = {
    "type": "object",
    "required": ["schema_version"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": 1},
        "network": {"oneOf": [
            {"type": "object", "required": ["grid"], "additionalProperties": False,
             "properties": {"grid": {"type": "array", "minItems": 2, "maxItems": 2,
                                     "items": {"type": "integer", "minimum": 1}},
                            "spacing": {"type": "number", "exclusiveMinimum": 0}}},
            {"type": "object", "required": ["positions", "edges"], "additionalProperties": False,
             "properties": {"positions": _matrix,
                            "edges": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                                 "items": {"type": "integer", "minimum": 1}}}}},
        ]},
        "sensors": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "model": {"enum": ["uncoupled", "coupled"]},
        "tau": {"type": "integer", "minimum": 2},
        "source": {"type": "integer", "minimum": 1},
        "sink": {"type": "integer", "minimum": 1},
        "agents": {"type": "integer", "minimum": 1},
        "lazy": {"type": "boolean"},
        "known_initial": {"type": "boolean"},
    },
}

DESK_CONFIG = {
    "schema_version": 1,
    "network": {"grid": list(ens.DESK_GRID), "spacing": 1.0},
    "sensors": [list(s) for s in ens.DESK_SENSORS],
    "model": "uncoupled",
    "tau": ens.DESK_TAU,
    "source": ens.DESK_SOURCE,
    "sink": ens.DESK_SINK,
    "agents": 100,
    "lazy": True,
    "known_initial": False,
}


class InputError(InvalidInput):
    """Problem file could not be read or failed validation."""


# ---------------------------------------------------------------- reading

def _read_json(path: str, schema: dict):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text") from exc
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(schema).iter_errors(doc))
    if err is not None:
        field = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise InputError(f"{path}: at {field}: {err.message}")
    return doc, hashlib.sha256(raw).hexdigest()


class ProblemSpec:
    """A validated problem file with labels mapped to ``1..J``."""

    def __init__(self, doc: dict):
        self.doc = doc
        self.labels = [n["id"] for n in doc["nodes"]]
        keys = [str(x) for x in self.labels]
        if len(set(keys)) != len(keys):
            raise InputError("at nodes: duplicate node id")
        self.index = {k: i + 1 for i, k in enumerate(keys)}
        self.positions = {self.index[str(n["id"])]: n.get("positions") for n in doc["nodes"]}
        self.edges = []
        for i, e in enumerate(doc["edges"]):
            a, b = (self._node(x, f"edges/{i}/nodes") for x in e["nodes"])
            self.edges.append((a, b, e))
        self.tree = validate_tree(len(self.labels), [(a, b) for a, b, _ in self.edges])
        self.marginals = {self._node(k, "marginals"): np.asarray(v, dtype=float)
                          for k, v in doc.get("marginals", {}).items()}
        eps = doc.get("epsilon")
        self.epsilons = [float(e) for e in eps] if isinstance(eps, list) else ([float(eps)] if eps is not None else [])
        self.options = doc.get("options", {})
        self.root = self._node(doc["root"], "root") if "root" in doc else None

    def _node(self, label, where):
        key = str(label)
        if key not in self.index:
            raise InputError(f"at {where}: unknown node {label!r}")
        return self.index[key]

    def label(self, j: int) -> str:
        return str(self.labels[j - 1])

    def problem(self, epsilon: float | None) -> TreeOTProblem:
        needs_eps = any(e["cost"] != "neg_log_stochastic" for _, _, e in self.edges)
        if epsilon is None:
            if needs_eps:
                raise InputError("at epsilon: required for cost-based edges")
            epsilon = 1.0
        costs, logk = {}, {}
        for i, (a, b, e) in enumerate(self.edges):
            spec = e["cost"]
            if spec == "euclidean":
                pa, pb = self.positions[a], self.positions[b]
                if pa is None or pb is None:
                    raise InputError(f"at edges/{i}: euclidean cost needs positions on both nodes")
                C = cdist(_points(pa), _points(pb))
                L = -C / epsilon
            elif spec == "neg_log_stochastic":
                if "matrix" not in e:
                    raise InputError(f"at edges/{i}: neg_log_stochastic needs a matrix")
                A = _as_matrix(e["matrix"], f"edges/{i}/matrix")
                with np.errstate(divide="ignore"):
                    L = np.log(A)
                C = -epsilon * L
            else:
                C = _as_matrix(spec, f"edges/{i}/cost")
                L = -C / epsilon
            costs[(a, b)], logk[(a, b)] = C, L
        return TreeOTProblem(self.tree, costs, epsilon, self.marginals, logk)


def _points(p):
    x = np.asarray(p, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _as_matrix(rows, where):
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"at {where}: ragged matrix")
    return np.asarray(rows, dtype=float)


# ---------------------------------------------------------------- writing

def _plain(x):
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _dump(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=1) + "\n"


def _emit(text: str, dest: str | None) -> None:
    if dest is None or dest == "-":
        sys.stdout.write(text)
    else:
        Path(dest).write_text(text)


def _header(digest, command):
    return {"schema_version": 1, "version": __version__, "command": command, "input_sha256": digest}


def _plans_out(spec, plans):
    return [{"nodes": [spec.label(a), spec.label(b)], "matrix": M} for (a, b), M in sorted(plans.items())]


# ---------------------------------------------------------------- commands

def _solver_options(args, spec):
    opts = spec.options
    tol = args.tol if args.tol is not None else opts.get("tol", 1e-8)
    sweeps = args.max_sweeps if args.max_sweeps is not None else opts.get("max_sweeps", 10000)
    return tol, sweeps


def _multi(spec, eps, tol, sweeps, log_domain):
    problem = spec.problem(eps)
    try:
        report = solve(problem, tol=tol, max_sweeps=sweeps, log_domain=log_domain)
        error = None
    except ConvergenceError as exc:
        if exc.report is None:
            raise
        report, error = exc.report, str(exc)
    sol = summarize(report, problem)
    body = {
        "mode": "multi",
        "epsilon": eps,
        "marginals": {spec.label(j): m for j, m in sol.mu.items()},
        "plans": _plans_out(spec, sol.plans),
        "objective": sol.objective,
        "converged": report.converged,
        "sweeps": report.sweeps,
        "log_domain": report.log_domain,
        "log": {"residual": report.residual_history, "dual": report.dual_history},
    }
    return body, error, sol


def _pairwise(spec, eps, tol, sweeps, log_domain):
    problem = spec.problem(eps)
    try:
        sol = pairwise_solve(problem, tol=tol, max_sweeps=sweeps, log_domain=log_domain)
        error = None
    except ConvergenceError as exc:
        sol, error = exc.report, str(exc)
        if sol is None:
            return {"mode": "pairwise", "epsilon": eps, "converged": False}, error, None
    body = {
        "mode": "pairwise",
        "epsilon": eps,
        "marginals": {spec.label(j): m for j, m in sol.mu.items()},
        "plans": _plans_out(spec, sol.plans),
        "objective": sol.objective,
        "converged": sol.converged,
        "sweeps": sol.sweeps,
        "log_domain": sol.log_domain,
        "log": {"residual": sol.residual_history},
    }
    return body, error, sol


def _run_multi(spec, eps, tol, sweeps, log_domain):
    return _multi(spec, eps, tol, sweeps, log_domain)[:2]


def _run_pairwise(spec, eps, tol, sweeps, log_domain):
    return _pairwise(spec, eps, tol, sweeps, log_domain)[:2]


def _bridge_root(spec):
    if spec.root is not None:
        return spec.root
    lv = set(leaves(spec.tree))
    for j in spec.marginals:
        if j in lv:
            return j
    raise InputError("at marginals: the bridge needs a constrained leaf to root at")


def _run_bridge(spec, eps, tol, sweeps, log_domain):
    problem = spec.problem(eps)
    bp, _ = ot_to_bridge(problem, _bridge_root(spec))
    try:
        sol = bridge_sinkhorn(bp, tol=tol, max_sweeps=sweeps, log_domain=log_domain)
        error = None
    except ConvergenceError as exc:
        if exc.report is None:
            raise
        sol, error = exc.report, str(exc)
    body = {
        "mode": "bridge",
        "epsilon": eps,
        "root": spec.label(bp.root),
        "marginals": {spec.label(j): m for j, m in sol.mu.items()},
        "plans": _plans_out(spec, sol.plans),
        "converged": sol.converged,
        "sweeps": sol.sweeps,
        "log_domain": sol.log_domain,
        "log": {"residual": sol.residual_history},
    }
    if sol.converged:
        obj = bridge_objective(bp, sol)
        body["objective"] = {"conditional": obj.conditional, "unconditional": obj.unconditional}
    return body, error


def _run_compare(spec, eps, tol, sweeps, log_domain):
    # each solver keeps its own default arithmetic unless --log-domain is given
    multi, err_m, m = _multi(spec, eps, tol, sweeps, log_domain or "auto")
    pair, err_p, p = _pairwise(spec, eps, tol, sweeps, log_domain or "off")
    body = {"mode": "compare", "epsilon": eps, "multi": multi, "pairwise": pair}
    if err_m is None and err_p is None:
        rep = entropy_gap(p, m)
        body["entropy"] = [
            {"node": spec.label(r.node), "degree": r.degree, "multi": r.shannon_multi,
             "pairwise": r.shannon_pairwise, "gap": r.gap}
            for r in rep.nodes
        ]
        body["decomposition"] = {"edge_terms": rep.edge_terms, "node_terms": rep.node_terms,
                                 "constant": rep.constant, "total": rep.multi_objective}
    return body, err_m or err_p


def _run_oracle(spec, eps, tol, sweeps, log_domain):
    problem = spec.problem(eps)
    tp = TensorProblem.from_tree(problem.tree, problem.edge_costs, eps, problem.constraints, problem.sizes)
    try:
        sol = dense_sinkhorn(tp, tol=tol, max_sweeps=sweeps)
        error = None
    except ConvergenceError as exc:
        sol, error = exc.report, str(exc)
    body = {
        "mode": "multi",
        "oracle": True,
        "epsilon": eps,
        "marginals": {spec.label(j): project(sol.tensor, j) for j in problem.tree.nodes},
        "plans": _plans_out(spec, {(a, b): project_pair(sol.tensor, a, b) for a, b in problem.tree.edges}),
        "objective": dense_objective(sol.tensor, tp.cost, eps),
        "converged": sol.converged,
        "sweeps": sol.sweeps,
        "log": {"dual": sol.dual_history},
    }
    return body, error


RUNNERS = {
    "solve": (_run_multi, "auto"),
    "pairwise": (_run_pairwise, "off"),
    "bridge": (_run_bridge, "auto"),
    "compare": (_run_compare, None),
    "oracle": (_run_oracle, None),
}


def _one(command, doc, eps, tol, sweeps, log_domain, timing):
    runner, _ = RUNNERS[command]
    spec = ProblemSpec(doc)
    start = time.perf_counter()
    body, error = runner(spec, eps, tol, sweeps, log_domain)
    if timing:
        body["seconds"] = time.perf_counter() - start
    if error is not None:
        body["error"] = error
    return body, error


def _eps_name(eps: float) -> str:
    return f"result_eps{eps:g}.json"


def cmd_problem(args) -> int:
    doc, digest = _read_json(args.problem, PROBLEM_SCHEMA)
    spec = ProblemSpec(doc)
    tol, sweeps = _solver_options(args, spec)
    _, default_log = RUNNERS[args.command]
    log_domain = args.log_domain or spec.options.get("log_domain", default_log)
    eps_list = args.epsilon or spec.epsilons or [None]
    multi = len(eps_list) > 1
    if multi and not args.output:
        raise InputError("an epsilon grid needs --output DIR (one result file per epsilon)")
    if multi or args.jobs > 1:
        if multi:
            Path(args.output).mkdir(parents=True, exist_ok=True)
        jobs = [(args.command, doc, e, tol, sweeps, log_domain, args.timing) for e in eps_list]
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_star_one, jobs))
        else:
            results = [_one(*j) for j in jobs]
    else:
        results = [_one(args.command, doc, eps_list[0], tol, sweeps, log_domain, args.timing)]
    code = EXIT_OK
    for eps, (body, error) in zip(eps_list, results):
        out = _header(digest, args.command)
        out.update(body)
        dest = str(Path(args.output) / _eps_name(eps)) if multi else args.output
        _emit(_dump(out), dest)
        if error is not None:
            print(f"treeot: {error}", file=sys.stderr)
            code = EXIT_CONVERGENCE
    return code


def _star_one(job):
    return _one(*job)


# ---------------------------------------------------------------- ensemble

def _ensemble_config(path):
    if path is None:
        return dict(DESK_CONFIG), hashlib.sha256(_dump(DESK_CONFIG).encode()).hexdigest()
    doc, digest = _read_json(path, ENSEMBLE_SCHEMA)
    cfg = dict(DESK_CONFIG)
    cfg.update(doc)
    return cfg, digest


def _network(cfg) -> ens.Network:
    net = cfg["network"]
    if "grid" in net:
        return ens.grid_network(*net["grid"], spacing=net.get("spacing", 1.0))
    return ens.Network(np.asarray(net["positions"], dtype=float), tuple(tuple(e) for e in net["edges"]))


def _prior(cfg, tol, sweeps):
    network = _network(cfg)
    A = ens.build_random_walk(network, lazy=cfg["lazy"])
    bridge = ens.plan_prior(network, cfg["source"], cfg["sink"], cfg["tau"], A, tol=tol, max_sweeps=sweeps)
    model = ens.ObservationModel.make(cfg["model"], network, cfg["sensors"])
    return network, bridge, model


def cmd_ensemble_simulate(args) -> int:
    cfg, digest = _ensemble_config(args.config)
    if args.agents is not None:
        cfg["agents"] = args.agents
    if args.model is not None:
        cfg["model"] = args.model
    tol = args.tol if args.tol is not None else 1e-10
    network, bridge, model = _prior(cfg, tol, args.max_sweeps or 10000)
    mu0 = np.zeros(network.n)
    mu0[cfg["source"] - 1] = 1.0
    inst = ens.simulate(bridge.stochastic, mu0, cfg["agents"], model, seed=args.seed)
    out = _header(digest, "ensemble simulate")
    out.update({
        "config": cfg,
        "seed": args.seed,
        "agents": inst.N,
        "tau": inst.tau,
        "trajectories": inst.trajectories + 1,
        "observations": inst.observations,
        "occupancy": inst.occupancy,
    })
    _emit(_dump(out), args.output)
    return EXIT_OK


SIMULATION_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "config", "observations"],
    "properties": {
        "schema_version": {"const": 1},
        "config": ENSEMBLE_SCHEMA,
        "observations": {"type": "array"},
        "occupancy": {"type": "array"},
    },
}


def cmd_ensemble_estimate(args) -> int:
    doc, _ = _read_json(args.simulation, SIMULATION_SCHEMA)
    cfg = dict(DESK_CONFIG)
    cfg.update(doc["config"])
    tol = args.tol if args.tol is not None else 1e-8
    sweeps = args.max_sweeps or 10000
    network, bridge, model = _prior(cfg, min(tol, 1e-10), sweeps)
    obs = np.asarray(doc["observations"], dtype=float)
    mu0 = None
    if cfg["known_initial"]:
        mu0 = np.zeros(network.n)
        mu0[cfg["source"] - 1] = 1.0
    hmt = ens.build_hmt_problem(obs, bridge.stochastic, model, mu_first=mu0)
    est = ens.estimate(hmt, tol=tol, max_sweeps=sweeps, log_domain=args.log_domain or "auto")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "node", "weight"])
    for t, row in enumerate(est.mu, start=1):
        for node, w in enumerate(row, start=1):
            writer.writerow([t, node, repr(float(w))])
    _emit(buf.getvalue(), args.output)
    if "occupancy" in doc and args.report:
        inst_occ = np.asarray(doc["occupancy"], dtype=float)
        C = euclidean_cost(network.positions)
        errs = [ens.earth_movers_distance(est.mu[t], inst_occ[t], C) for t in range(len(inst_occ))]
        print(f"mean earth mover error: {np.mean(errs):.6g}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- parser

EPILOG = """exit codes:
  0  success
  1  invalid input: unreadable file, malformed JSON, schema or shape errors
  2  numerical failure, or problem too large for the dense oracle
  3  no convergence within --max-sweeps (partial result and log are written)
"""


def _common(p, default_log):
    p.add_argument("--tol", type=float, default=None, help="L1 residual tolerance (default 1e-8)")
    p.add_argument("--max-sweeps", type=int, default=None, help="sweep limit (default 10000)")
    p.add_argument("--log-domain", choices=["auto", "on", "off"], default=None,
                   help=f"log-domain arithmetic (default {default_log})")
    p.add_argument("--output", "-o", default=None, help="output file, or directory for an epsilon grid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeot",
        description="Entropic multi-marginal transport on trees, tree bridges and ensemble estimation.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "multi-marginal Sinkhorn with message passing",
        "bridge": "tree Schroedinger bridge on the row-normalized kernels",
        "pairwise": "pairwise-regularized baseline",
        "compare": "multi-marginal vs pairwise with per-node entropy table",
        "oracle": "dense brute-force Sinkhorn (small problems only)",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("problem", help="problem JSON file")
        p.add_argument("--epsilon", type=float, nargs="+", default=None,
                       help="regularization value(s); several values need --output DIR")
        p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the solvers are deterministic")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for an epsilon grid")
        p.add_argument("--timing", action="store_true", help="record wall-clock seconds (breaks byte reproducibility)")
        _common(p, RUNNERS[name][1] or ("auto/off" if name == "compare" else "n/a"))
        p.set_defaults(func=cmd_problem)

    p_ens = sub.add_parser("ensemble", help="agent ensemble simulation and estimation")
    ens_sub = p_ens.add_subparsers(dest="ensemble_command", required=True)
    p_sim = ens_sub.add_parser("simulate", help="simulate agents and aggregate sensor counts",
                               epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p_sim.add_argument("config", nargs="?", default=None, help="ensemble JSON (default: built-in 5x5 grid)")
    p_sim.add_argument("--agents", "-N", type=int, default=None, help="number of agents")
    p_sim.add_argument("--model", choices=["uncoupled", "coupled"], default=None)
    p_sim.add_argument("--seed", type=int, default=0)
    _common(p_sim, "auto")
    p_sim.set_defaults(func=cmd_ensemble_simulate, command="ensemble simulate")
    p_est = ens_sub.add_parser("estimate", help="estimate occupancy from a simulation file (CSV t,node,weight)",
                               epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p_est.add_argument("simulation", help="output of 'ensemble simulate'")
    p_est.add_argument("--report", action="store_true", help="print the earth mover error against the true occupancy")
    _common(p_est, "auto")
    p_est.set_defaults(func=cmd_ensemble_estimate, command="ensemble estimate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"treeot: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except InvalidInput as exc:
        print(f"treeot: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"treeot: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TreeOTError as exc:
        print(f"treeot: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
