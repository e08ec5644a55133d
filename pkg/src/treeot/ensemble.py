"""Tracking an ensemble of indistinguishable agents from aggregate sensor counts.

Agents move on a network under a Markov chain. At every time step each
sensor reports how many agents it detected (uncoupled model), or a single
joint report counts agents by the exact set of sensors that saw them
(coupled model). Estimation solves a bridge on a hidden-Markov tree: a chain
of state nodes, one per time step, with the observation nodes hanging off it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components
from scipy import sparse

from .bridge import BridgeSolution, MarkovTreeProblem, PathBridge, bridge_sinkhorn, path_bridge
from .errors import InconsistentCounts, InvalidInput, ShapeMismatch, TooLarge
from .graph import root_at, validate_tree
from .numerics import euclidean_cost

MAX_COUPLED_SENSORS = 15


@dataclass(frozen=True, eq=False)
class Network:
    """Undirected graph of agent locations; nodes are labelled ``1..n``."""

    positions: np.ndarray
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or len(pos) == 0:
            raise ShapeMismatch("positions must be an (n, d) array")
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        n = len(pos)
        for a, b in edges:
            if not (1 <= a <= n and 1 <= b <= n) or a == b:
                raise InvalidInput(f"bad network edge ({a}, {b})")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "edges", edges)
        if n > 1 and connected_components(self.adjacency(), directed=False)[0] != 1:
            raise InvalidInput("network is not connected")

    @property
    def n(self) -> int:
        return len(self.positions)

    def adjacency(self):
        a = np.array([e[0] - 1 for e in self.edges], dtype=int)
        b = np.array([e[1] - 1 for e in self.edges], dtype=int)
        data = np.ones(2 * len(a))
        adj = sparse.coo_matrix((data, (np.r_[a, b], np.r_[b, a])), shape=(self.n, self.n)).tocsr()
        adj.data[:] = 1.0
        return adj


def grid_network(rows: int, cols: int, spacing: float = 1.0) -> Network:
    """4-neighbour grid; node ``r * cols + c + 1`` sits at ``(c, r) * spacing``."""
    pos = [(c * spacing, r * spacing) for r in range(rows) for c in range(cols)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c + 1
            if c + 1 < cols:
                edges.append((k, k + 1))
            if r + 1 < rows:
                edges.append((k, k + cols))
    return Network(np.array(pos), tuple(edges))


def build_random_walk(network: Network, lazy: bool = True) -> np.ndarray:
    """Uniform random walk; the lazy walk also stays put with probability ``1/(deg+1)``."""
    adj = network.adjacency().toarray()
    if lazy:
        adj = adj + np.eye(network.n)
    deg = adj.sum(axis=1)
    if np.any(deg == 0):
        raise InvalidInput("an isolated node has no move without self-loops")
    return adj / deg[:, None]


def detection_probabilities(network: Network, sensors) -> np.ndarray:
    """``min(0.99, 2 exp(-d))`` for every (sensor, node) pair."""
    s = np.atleast_2d(np.asarray(sensors, dtype=float))
    if s.size == 0:
        return np.zeros((0, network.n))
    d = np.sqrt(((s[:, None, :] - network.positions[None, :, :]) ** 2).sum(axis=-1))
    return np.minimum(0.99, 2.0 * np.exp(-d))


@dataclass(eq=False)
class ObservationModel:
    """Per-node observation probabilities.

    Uncoupled: one ``n x 2`` matrix per sensor, column 0 = detected,
    column 1 = not detected. Coupled: a single ``n x 2**S`` matrix whose
    column ``mask`` is the probability that exactly the sensors whose bits
    are set in ``mask`` detect the agent.
    """

    kind: str
    sensors: np.ndarray
    detection: np.ndarray
    matrices: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def uncoupled(cls, network: Network, sensors) -> "ObservationModel":
        p = detection_probabilities(network, sensors)
        mats = [np.column_stack([ps, 1.0 - ps]) for ps in p]
        return cls("uncoupled", np.atleast_2d(np.asarray(sensors, dtype=float)), p, mats)

    @classmethod
    def coupled(cls, network: Network, sensors) -> "ObservationModel":
        p = detection_probabilities(network, sensors)
        S = len(p)
        if S > MAX_COUPLED_SENSORS:
            raise TooLarge(f"coupled model supports at most {MAX_COUPLED_SENSORS} sensors, got {S}")
        B = np.ones((network.n, 2**S))
        masks = np.arange(2**S)
        for s in range(S):
            hit = ((masks >> s) & 1).astype(bool)
            B *= np.where(hit[None, :], p[s][:, None], 1.0 - p[s][:, None])
        return cls("coupled", np.atleast_2d(np.asarray(sensors, dtype=float)), p, [B])

    @classmethod
    def make(cls, kind: str, network: Network, sensors) -> "ObservationModel":
        if kind == "uncoupled":
            return cls.uncoupled(network, sensors)
        if kind == "coupled":
            return cls.coupled(network, sensors)
        raise InvalidInput(f"unknown observation model {kind!r}")

    @property
    def reports(self) -> int:
        """Number of observation nodes per time step."""
        return len(self.matrices)

    @property
    def symbols(self) -> int:
        return self.matrices[0].shape[1] if self.matrices else 0


def plan_prior(network: Network, source: int, sink: int, tau: int, A=None,
               tol: float = 1e-10, max_sweeps: int = 10000, log_domain: str = "auto") -> PathBridge:
    """Bridge from all agents at ``source`` to all agents at ``sink`` in ``tau`` steps.

    The resulting step-wise stochastic matrices drive the simulation.
    """
    if tau < 2:
        raise InvalidInput("tau must be at least 2")
    n = network.n
    for node in (source, sink):
        if not 1 <= node <= n:
            raise InvalidInput(f"node {node} not in 1..{n}")
    if A is None:
        A = build_random_walk(network)
    first, last = np.zeros(n), np.zeros(n)
    first[source - 1] = 1.0
    last[sink - 1] = 1.0
    return path_bridge([A] * (tau - 1), first, last, tol=tol, max_sweeps=max_sweeps, log_domain=log_domain)


@dataclass
class EnsembleInstance:
    """Simulated agents and their aggregate observations.

    ``trajectories`` is ``N x tau`` with 0-based state indices;
    ``observations`` is ``tau x reports x symbols`` counts; ``occupancy`` is
    ``tau x n`` agent counts per node.
    """

    tau: int
    N: int
    transitions: list[np.ndarray]
    trajectories: np.ndarray
    observations: np.ndarray
    occupancy: np.ndarray
    model: ObservationModel


def simulate(transitions, mu_first, N: int, model: ObservationModel, seed=None) -> EnsembleInstance:
    """Draw ``N`` independent trajectories and aggregate their observations.

    All randomness comes from one generator seeded with ``seed``; the draws
    are made in a fixed order (initial states, then one step at a time, then
    all detections), so a seed determines the output exactly.
    """
    rng = np.random.default_rng(seed)
    mu = np.asarray(mu_first, dtype=float)
    mu = mu / mu.sum()
    n = len(mu)
    tau = len(transitions) + 1
    traj = np.empty((N, tau), dtype=np.int64)
    traj[:, 0] = rng.choice(n, size=N, p=mu)
    for t, A in enumerate(transitions):
        cum = np.cumsum(np.asarray(A, dtype=float)[traj[:, t]], axis=1)
        draw = rng.random(N) * cum[:, -1]
        traj[:, t + 1] = np.minimum((cum <= draw[:, None]).sum(axis=1), n - 1)
    p = model.detection
    S = len(p)
    hits = rng.random((tau, N, S)) < np.transpose(p[:, traj], (2, 1, 0))
    if model.kind == "uncoupled":
        det = hits.sum(axis=1)
        obs = np.stack([det, N - det], axis=-1)
    else:
        masks = (hits * (1 << np.arange(S))).sum(axis=-1)
        obs = np.stack([np.bincount(masks[t], minlength=2**S) for t in range(tau)])[:, None, :]
    occ = np.stack([np.bincount(traj[:, t], minlength=n) for t in range(tau)])
    return EnsembleInstance(tau, N, [np.asarray(A) for A in transitions], traj, obs.astype(np.int64), occ, model)


@dataclass
class HiddenMarkovTree:
    """A bridge problem on the hidden-Markov tree plus its node bookkeeping."""

    problem: MarkovTreeProblem
    chain: list[int]
    observation_nodes: dict[tuple[int, int], int]
    N: float
    first_node: int | None = None
    last_node: int | None = None


def _row_normalize_transpose(B):
    Bt = np.asarray(B, dtype=float).T
    rows = Bt.sum(axis=1, keepdims=True)
    out = np.full_like(Bt, 1.0 / Bt.shape[1])
    live = rows[:, 0] > 0
    out[live] = Bt[live] / rows[live]
    return out


def build_hmt_problem(observations, A, model: ObservationModel, mu_first=None, mu_last=None) -> HiddenMarkovTree:
    """Assemble the hidden-Markov tree for ``observations`` (``tau x reports x symbols``).

    Chain node ``t`` (1-based) carries the state distribution at time ``t``;
    observation node ``(t, s)`` carries the counts of report ``s``. Without a
    known initial distribution the tree is rooted at the first observation
    node, with the reversed edge ``rownorm(B^T)``; this is the same as a
    uniform reference distribution on the initial state. A known initial or
    final distribution is attached through an extra leaf joined by the
    identity transition.
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim != 3:
        raise ShapeMismatch("observations must be a tau x reports x symbols array")
    tau, S, m = obs.shape
    if S != model.reports or (S and m != model.symbols):
        raise ShapeMismatch(f"observations have shape {obs.shape}, model expects {model.reports} x {model.symbols}")
    totals = obs.sum(axis=2)
    if S and np.ptp(totals) > 1e-9 * max(1.0, np.abs(totals).max()):
        raise InconsistentCounts(f"observation totals differ: {np.unique(totals)}")
    mats = list(A) if isinstance(A, (list, tuple)) else [np.asarray(A, dtype=float)] * (tau - 1)
    if len(mats) != tau - 1:
        raise ShapeMismatch(f"need {tau - 1} transition matrices, got {len(mats)}")
    N = float(totals.flat[0]) if S else None

    chain = list(range(1, tau + 1))
    label = tau
    obs_nodes = {}
    edges = [(t, t + 1) for t in range(1, tau)]
    for t in range(1, tau + 1):
        for s in range(S):
            label += 1
            obs_nodes[(t, s)] = label
            edges.append((t, label))
    first_node = last_node = None
    marg = {obs_nodes[k]: obs[k[0] - 1, k[1]] for k in obs_nodes}
    if mu_first is not None:
        label += 1
        first_node = label
        edges.append((1, label))
        mu = np.asarray(mu_first, dtype=float)
        N = N if N is not None else float(mu.sum())
        marg[label] = mu / mu.sum() * N
    if mu_last is not None:
        label += 1
        last_node = label
        edges.append((tau, label))
        mu = np.asarray(mu_last, dtype=float)
        N = N if N is not None else float(mu.sum())
        marg[label] = mu / mu.sum() * N
    if not marg:
        raise InvalidInput("nothing is observed: need sensors or a known endpoint distribution")
    tree = validate_tree(label, edges)
    if first_node is not None:
        root = first_node
    elif S:
        root = obs_nodes[(1, 0)]
    else:
        root = last_node
    rt = root_at(tree, root)
    node_model = {obs_nodes[(t, s)]: model.matrices[s] for (t, s) in obs_nodes}
    trans = {}
    for p, c in rt.edges:
        if p in node_model and c == 1:
            trans[(p, c)] = _row_normalize_transpose(node_model[p])
        elif c in node_model:
            trans[(p, c)] = node_model[c]
        elif c in (first_node, last_node) or p in (first_node, last_node):
            trans[(p, c)] = np.eye(len(marg[first_node if first_node in (p, c) else last_node]))
        elif c == p + 1:
            trans[(p, c)] = mats[p - 1]
        else:
            trans[(p, c)] = _row_normalize_transpose(mats[c - 1])
    problem = MarkovTreeProblem(rt, trans, marg)
    return HiddenMarkovTree(problem, chain, obs_nodes, N, first_node, last_node)


@dataclass
class EnsembleEstimate:
    """Estimated occupancy ``mu`` (``tau x n``), flows and observation plans, all at scale ``N``."""

    mu: np.ndarray
    flows: list[np.ndarray]
    observation_plans: dict[tuple[int, int], np.ndarray]
    solution: BridgeSolution


def estimate(hmt: HiddenMarkovTree, tol: float = 1e-8, max_sweeps: int = 10000,
             log_domain: str = "auto") -> EnsembleEstimate:
    sol = bridge_sinkhorn(hmt.problem, tol=tol, max_sweeps=max_sweeps, log_domain=log_domain)
    mu = np.stack([sol.mu[t] for t in hmt.chain])

    def plan(a, b):
        return sol.plans[(a, b)] if (a, b) in sol.plans else sol.plans[(b, a)].T

    flows = [plan(t, t + 1) for t in hmt.chain[:-1]]
    obs_plans = {key: plan(key[0], node) for key, node in hmt.observation_nodes.items()}
    return EnsembleEstimate(mu, flows, obs_plans, sol)


def earth_movers_distance(p, q, cost) -> float:
    """Optimal transport cost between ``p`` and ``q`` after normalizing both to unit mass."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p, q = p / p.sum(), q / q.sum()
    n, m = len(p), len(q)
    rows = sparse.vstack([
        sparse.kron(sparse.eye(n), np.ones((1, m))),
        sparse.kron(np.ones((1, n)), sparse.eye(m)),
    ]).tocsr()
    res = linprog(np.asarray(cost, dtype=float).ravel(), A_eq=rows, b_eq=np.r_[p, q],
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise InvalidInput(f"transport LP failed: {res.message}")
    return float(res.fun)


def estimation_error(est: EnsembleEstimate, instance: EnsembleInstance, network: Network) -> float:
    """Mean over time of the earth mover's distance between estimated and true occupancy."""
    C = euclidean_cost(network.positions)
    return float(np.mean([earth_movers_distance(est.mu[t], instance.occupancy[t], C) for t in range(instance.tau)]))


# Desk-scale stand-in for the network experiment.
DESK_GRID = (5, 5)
DESK_SENSORS = ((1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0))
DESK_TAU = 10
DESK_SOURCE = 1
DESK_SINK = 25
