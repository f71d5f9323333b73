"""Probabilistic roadmap over the unit square.

Builds the directed k-nearest-neighbor graph the planner moves on, augments
its nodes with the current belief, and walks edges under a travel budget
while emitting measurement points at a fixed arc-length interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .belief import BeliefState, posterior_marginals

DEFAULT_MEASUREMENT_INTERVAL = 0.2
BUDGET_SLACK = 1e-12

GRAPH_MAGIC = "roadmap 1"


class RoadmapGraph:
    """Directed k-nearest-neighbor graph over n nodes in the unit square.

    Immutable once built. Each adjacency row holds k distinct node indices
    sorted by edge length ascending, never including the node itself.
    """

    def __init__(self, nodes: np.ndarray, adjacency: np.ndarray, seed: int = 0):
        nodes = np.asarray(nodes, dtype=float)
        adjacency = np.asarray(adjacency, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError(f"nodes must be an (n, 2) array, got shape {nodes.shape}")
        if adjacency.ndim != 2 or adjacency.shape[0] != len(nodes):
            raise ValueError(
                f"adjacency must be (n, k) with one row per node, got {adjacency.shape} "
                f"for {len(nodes)} nodes")
        n, k = adjacency.shape
        if not 1 <= k < n:
            raise ValueError(f"need 1 <= k < n neighbors per node, got k={k}, n={n}")
        if adjacency.min() < 0 or adjacency.max() >= n:
            raise ValueError("adjacency refers to node indices outside the graph")
        if np.any(adjacency == np.arange(n)[:, None]):
            raise ValueError("adjacency must not contain self-loops")
        for i in range(n):
            if len(set(adjacency[i].tolist())) != k:
                raise ValueError(f"node {i} repeats a neighbor")
        self.nodes = nodes
        self.adjacency = adjacency
        self.seed = int(seed)
        self.edge_lengths = np.linalg.norm(
            nodes[adjacency] - nodes[:, None, :], axis=-1)
        if np.any(np.diff(self.edge_lengths, axis=1) < -1e-9):
            raise ValueError("neighbor rows must be sorted by distance ascending")
        self._csr = None

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def k(self) -> int:
        return self.adjacency.shape[1]

    def _sparse(self) -> csr_matrix:
        # Built lazily; the graph is immutable so the cache stays valid.
        if self._csr is None:
            rows = np.repeat(np.arange(self.n), self.k)
            self._csr = csr_matrix(
                (self.edge_lengths.ravel(), (rows, self.adjacency.ravel())),
                shape=(self.n, self.n))
        return self._csr


def build_graph(n: int, k: int, seed: int) -> RoadmapGraph:
    """Sample n uniform nodes and wire each to its k nearest neighbors.

    The adjacency is directed: node j being among i's nearest neighbors does
    not imply the reverse. Deterministic for a given (n, k, seed).
    """
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(0.0, 1.0, (n, 2))
    delta = nodes[:, None, :] - nodes[None, :, :]
    dist = np.sqrt((delta ** 2).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return RoadmapGraph(nodes, order, seed)


@dataclass(frozen=True)
class AugmentedNode:
    """A graph node dressed with the belief at its position."""

    position: tuple[float, float]
    belief_mean: float
    belief_std: float


def node_features(graph: RoadmapGraph, belief: BeliefState, t: float) -> np.ndarray:
    """(n, 4) array of (x, y, posterior mean, posterior std) at step ``t``."""
    queries = np.column_stack([graph.nodes, np.full(graph.n, float(t))])
    mean, var = posterior_marginals(belief, queries)
    return np.column_stack([graph.nodes, mean, np.sqrt(var)])


def augment(graph: RoadmapGraph, belief: BeliefState, t: float) -> list[AugmentedNode]:
    """Belief-augmented view of every node, in node-index order."""
    feats = node_features(graph, belief, t)
    return [AugmentedNode((float(x), float(y)), float(m), float(s))
            for x, y, m, s in feats]


@dataclass(frozen=True)
class PlanningState:
    """Where the agent is, what budget remains, and the path walked so far."""

    current_node: int
    remaining_budget: float
    trajectory: tuple
    distance_since_measurement: float = 0.0

    def __post_init__(self):
        if self.remaining_budget < 0:
            raise ValueError(f"remaining budget must be non-negative, "
                             f"got {self.remaining_budget}")
        if self.distance_since_measurement < 0:
            raise ValueError("distance since the last measurement cannot be negative")
        if not self.trajectory or self.trajectory[-1] != self.current_node:
            raise ValueError("trajectory must end at the current node")


def initial_state(node: int, budget: float) -> PlanningState:
    return PlanningState(int(node), float(budget), (int(node),), 0.0)


def traverse(state: PlanningState, graph: RoadmapGraph, target: int,
             interval: float = DEFAULT_MEASUREMENT_INTERVAL):
    """Walk the edge from the current node to neighbor ``target``.

    Returns the successor state and an (m, 2) array of measurement positions,
    one every ``interval`` of accumulated arc length. The leftover distance
    carries into the next move so spacing stays even across edges.
    """
    if interval <= 0:
        raise ValueError(f"measurement interval must be positive, got {interval}")
    target = int(target)
    row = graph.adjacency[state.current_node]
    hits = np.nonzero(row == target)[0]
    if len(hits) == 0:
        raise ValueError(
            f"node {target} is not a neighbor of node {state.current_node}")
    length = float(graph.edge_lengths[state.current_node, hits[0]])
    if length > state.remaining_budget + BUDGET_SLACK:
        raise ValueError(
            f"edge of length {length:.6f} exceeds the remaining budget "
            f"{state.remaining_budget:.6f}")
    p0 = graph.nodes[state.current_node]
    p1 = graph.nodes[target]
    arcs = []
    s = interval - state.distance_since_measurement
    while s <= length:
        arcs.append(s)
        s += interval
    if arcs:
        points = p0 + (p1 - p0) * (np.array(arcs) / length)[:, None]
        carry = length - arcs[-1]
    else:
        points = np.zeros((0, 2))
        carry = state.distance_since_measurement + length
    nxt = PlanningState(target, max(0.0, state.remaining_budget - length),
                        state.trajectory + (target,), carry)
    return nxt, points


def nearest_node(graph: RoadmapGraph, point) -> int:
    """Index of the node closest to ``point`` (ties go to the lowest index)."""
    d = np.linalg.norm(graph.nodes - np.asarray(point, dtype=float), axis=1)
    return int(np.argmin(d))


def distances_to_node(graph: RoadmapGraph, destination: int) -> np.ndarray:
    """Shortest directed-path length from every node to ``destination``.

    Unreachable nodes get inf. Computed by one Dijkstra sweep on the reversed
    graph rather than n separate searches.
    """
    if not 0 <= destination < graph.n:
        raise ValueError(f"destination {destination} outside the graph")
    return dijkstra(graph._sparse().T, indices=destination)


def distances_from_node(graph: RoadmapGraph, source: int) -> np.ndarray:
    """Shortest directed-path length from ``source`` to every node (inf if unreachable)."""
    if not 0 <= source < graph.n:
        raise ValueError(f"source {source} outside the graph")
    return dijkstra(graph._sparse(), indices=source)


def shortest_path(graph: RoadmapGraph, source: int, target: int) -> list:
    """Node sequence of a shortest directed path from source to target, inclusive."""
    for name, idx in (("source", source), ("target", target)):
        if not 0 <= idx < graph.n:
            raise ValueError(f"{name} {idx} outside the graph")
    dist, pred = dijkstra(graph._sparse(), indices=source, return_predecessors=True)
    if not np.isfinite(dist[target]):
        raise ValueError(f"node {target} is unreachable from node {source}")
    path = [int(target)]
    while path[-1] != source:
        path.append(int(pred[path[-1]]))
    path.reverse()
    return path


def save_graph(graph: RoadmapGraph, path) -> None:
    """Write the graph as plain text.

    Line 1 is the format tag, line 2 is "n k seed", then n coordinate lines
    ("x y" with full precision) and n adjacency lines of k node indices.
    """
    lines = [GRAPH_MAGIC, f"{graph.n} {graph.k} {graph.seed}"]
    for x, y in graph.nodes:
        lines.append(f"{float(x)!r} {float(y)!r}")
    for row in graph.adjacency:
        lines.append(" ".join(str(int(j)) for j in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_graph(path) -> RoadmapGraph:
    """Read a graph written by save_graph; exact float round trip."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != GRAPH_MAGIC:
        raise ValueError(f"{path} is not a roadmap graph file")
    try:
        n, k, seed = (int(tok) for tok in lines[1].split())
        if len(lines) < 2 + 2 * n:
            raise ValueError("truncated file")
        nodes = np.array([[float(tok) for tok in line.split()]
                          for line in lines[2:2 + n]])
        adjacency = np.array([[int(tok) for tok in line.split()]
                              for line in lines[2 + n:2 + 2 * n]])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed roadmap graph file {path}: {exc}") from exc
    return RoadmapGraph(nodes, adjacency, seed)
