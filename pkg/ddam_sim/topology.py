"""Physical graph, logical weights, routing-tree records and link-capacity accounting."""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx
import numpy as np
import pandas as pd
from numpy.typing import NDArray

from ddam_sim.errors import ConfigurationError, TopologyError, WeightValidationError

logger = logging.getLogger(__name__)

Edge = tuple[int, int]

ROW_SUM_TOL = 1e-9
# Per-link load of consensus averaging: every edge carries one parameter each way.
CDOGD_CAPACITY = 2


def edge_key(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class PhysicalGraph:
    """Undirected, connected communication graph with integer per-hop delays."""

    n_nodes: int
    edges: tuple[Edge, ...]
    edge_delay: Mapping[Edge, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise TopologyError(f"graph needs at least one node, got {self.n_nodes}")
        seen: set[Edge] = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"self-loop on node {i}", pair=(i, j))
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise TopologyError(f"edge ({i}, {j}) references a node outside 0..{self.n_nodes - 1}")
            key = edge_key(i, j)
            if key in seen:
                raise TopologyError(f"duplicate edge {key}", pair=key)
            seen.add(key)
        normalized = tuple(sorted(seen))
        delays = {edge_key(*e): int(d) for e, d in self.edge_delay.items()}
        for e in normalized:
            delays.setdefault(e, 1)
            if delays[e] < 1:
                raise TopologyError(f"edge {e} has non-positive delay {delays[e]}", pair=e)
        object.__setattr__(self, "edges", normalized)
        object.__setattr__(self, "edge_delay", {e: delays[e] for e in normalized})
        if not nx.is_connected(self.nx_graph):
            components = sorted(sorted(c) for c in nx.connected_components(self.nx_graph))
            raise TopologyError(f"graph is disconnected; nodes {components[1]} are unreachable from 0")

    @cached_property
    def nx_graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes))
        for (i, j) in self.edges:
            g.add_edge(i, j, delay=self.edge_delay[(i, j)])
        return g

    def neighbors(self, n: int) -> list[int]:
        return sorted(self.nx_graph.neighbors(n))

    def degree(self, n: int) -> int:
        return self.nx_graph.degree[n]

    def delay(self, i: int, j: int) -> int:
        return self.edge_delay[edge_key(i, j)]


@dataclass(frozen=True)
class LogicalWeights:
    """Row-stochastic matrix W; w_{n,m} is how much agent n cares about agent m's data."""

    W: NDArray[np.float64]

    @property
    def n_agents(self) -> int:
        return self.W.shape[0]

    def support(self, n: int) -> tuple[int, ...]:
        """W_n = {m : w_{n,m} > 0}."""
        return tuple(int(m) for m in np.flatnonzero(self.W[n] > 0))

    def remote_support(self, n: int) -> tuple[int, ...]:
        return tuple(m for m in self.support(n) if m != n)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.W, np.eye(self.n_agents)))


@dataclass(frozen=True)
class RoutingTree:
    """Tree rooted at an agent, carrying its broadcasts out and gradient replies back."""

    root: int
    tree_edges: frozenset[Edge]
    path_to: Mapping[int, tuple[Edge, ...]]
    hop_count: Mapping[int, int]
    round_trip: Mapping[int, int]

    @classmethod
    def from_edges(cls, graph: PhysicalGraph, root: int, edges: Iterable[Edge], targets: Iterable[int]) -> "RoutingTree":
        """Build the record for a tree given by its edge set; validates tree shape and coverage."""
        edge_set = frozenset(edge_key(*e) for e in edges)
        for e in edge_set:
            if e not in graph.edge_delay:
                raise TopologyError(f"tree edge {e} is not a graph edge", pair=e)
        t = nx.Graph()
        t.add_node(root)
        t.add_edges_from(sorted(edge_set))
        if not nx.is_tree(t):
            raise TopologyError(f"edges rooted at {root} do not form a tree")
        path_to: dict[int, tuple[Edge, ...]] = {}
        hop_count: dict[int, int] = {}
        for m in sorted(set(targets)):
            if m not in t:
                raise TopologyError(f"target {m} is not reached by the tree of {root}", pair=(root, m))
            nodes = nx.shortest_path(t, root, m)
            path = tuple(edge_key(a, b) for a, b in zip(nodes, nodes[1:]))
            path_to[m] = path
            hop_count[m] = sum(graph.edge_delay[e] for e in path)
        return cls(
            root=root,
            tree_edges=edge_set,
            path_to=path_to,
            hop_count=hop_count,
            round_trip={m: 2 * h for m, h in hop_count.items()},
        )

    @property
    def nodes(self) -> set[int]:
        touched = {self.root}
        for i, j in self.tree_edges:
            touched.update((i, j))
        return touched

    def total_edge_delay(self, graph: PhysicalGraph) -> int:
        return sum(graph.edge_delay[e] for e in self.tree_edges)

    def sum_path_delay(self) -> int:
        """Dist: sum of one-way root-to-target delays."""
        return sum(self.hop_count.values())


@dataclass(frozen=True)
class DelaySummary:
    tau_min: int
    tau_max: int
    delta_tau: int
    tau_sum: int
    round_trip: Mapping[int, int] = field(default_factory=dict)


def graph_from_edge_list(n_nodes: int, edges: Iterable[Iterable[int]]) -> PhysicalGraph:
    """Edges given as ``(i, j)`` or ``(i, j, delay)`` rows."""
    pairs: list[Edge] = []
    delays: dict[Edge, int] = {}
    for row in edges:
        row = tuple(int(x) for x in row)
        if len(row) not in (2, 3):
            raise ConfigurationError(f"edge rows need 2 or 3 entries, got {row}")
        pairs.append((row[0], row[1]))
        if len(row) == 3:
            delays[edge_key(row[0], row[1])] = row[2]
    return PhysicalGraph(n_nodes, tuple(pairs), delays)


def read_adjacency_csv(path: str | Path, n_nodes: int | None = None) -> PhysicalGraph:
    """Read an edge list CSV with header ``i,j,delay``."""
    frame = pd.read_csv(path)
    missing = {"i", "j", "delay"} - set(frame.columns)
    if missing:
        raise ConfigurationError(f"adjacency CSV lacks columns {sorted(missing)}", path=str(path))
    rows = frame[["i", "j", "delay"]].astype(int).itertuples(index=False, name=None)
    rows = list(rows)
    if n_nodes is None:
        n_nodes = 1 + max(max(i, j) for i, j, _ in rows)
    return graph_from_edge_list(n_nodes, rows)


def write_adjacency_csv(graph: PhysicalGraph, path: str | Path) -> None:
    frame = pd.DataFrame(
        [(i, j, graph.edge_delay[(i, j)]) for i, j in graph.edges], columns=["i", "j", "delay"]
    )
    frame.to_csv(path, index=False)


def erdos_renyi_graph(n_nodes: int, p: float = 0.25, seed: int = 0, max_attempts: int = 1000) -> PhysicalGraph:
    """G(n, p) with unit delays, re-drawn with successive seeds until connected."""
    for attempt in range(max_attempts):
        g = nx.gnp_random_graph(n_nodes, p, seed=seed + attempt)
        if nx.is_connected(g):
            if attempt:
                logger.info("Erdos-Renyi graph connected after %s redraws (seed %s)", attempt, seed + attempt)
            return PhysicalGraph(n_nodes, tuple(edge_key(i, j) for i, j in g.edges()))
    raise TopologyError(f"no connected G({n_nodes}, {p}) found in {max_attempts} draws from seed {seed}")


def all_pairs_hops(g: PhysicalGraph) -> NDArray[np.int64]:
    """Minimal path delays between every pair of nodes."""
    hops = np.full((g.n_nodes, g.n_nodes), -1, dtype=np.int64)
    for source, lengths in nx.all_pairs_dijkstra_path_length(g.nx_graph, weight="delay"):
        for target, d in lengths.items():
            hops[source, target] = d
    if np.any(hops < 0):
        i, j = (int(x) for x in np.argwhere(hops < 0)[0])
        raise TopologyError(f"no path between {i} and {j}", pair=(i, j))
    return hops


def validate_weights(W: NDArray[np.float64], n_nodes: int | None = None) -> LogicalWeights:
    """Accept a row-stochastic matrix, renormalizing rows within tolerance."""
    W = np.array(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise WeightValidationError(f"weight matrix must be square, got shape {W.shape}")
    if n_nodes is not None and W.shape[0] != n_nodes:
        raise WeightValidationError(f"weight matrix has {W.shape[0]} rows but the graph has {n_nodes} nodes")
    if not np.all(np.isfinite(W)):
        raise WeightValidationError("weight matrix has non-finite entries")
    if np.any(W < 0):
        n, m = (int(x) for x in np.argwhere(W < 0)[0])
        raise WeightValidationError(f"negative weight w[{n},{m}] = {W[n, m]}")
    sums = W.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        n = int(bad[0])
        raise WeightValidationError(f"row {n} sums to {sums[n]:.12g}, not 1")
    if np.any(sums != 1.0):
        logger.debug("Renormalizing %s weight rows within tolerance", int(np.sum(sums != 1.0)))
        W = W / sums[:, None]
    if np.any(W > 1):
        raise WeightValidationError("weights must lie in [0, 1]")
    return LogicalWeights(W)


def delay_summary(t: RoutingTree, targets: Iterable[int]) -> DelaySummary:
    """Round-trip delay statistics of tree t over the given targets (tau_{n,n} = 0)."""
    round_trip: dict[int, int] = {}
    for m in sorted(set(targets)):
        round_trip[m] = 0 if m == t.root else t.round_trip[m]
    if not round_trip:
        return DelaySummary(0, 0, 0, 0, {})
    taus = list(round_trip.values())
    tau_min, tau_max = min(taus), max(taus)
    return DelaySummary(tau_min, tau_max, tau_max - tau_min, sum(taus), round_trip)


def edge_loads(trees: Mapping[int, RoutingTree], W: LogicalWeights) -> dict[Edge, int]:
    """Number of (root, target) paths crossing each edge."""
    loads: dict[Edge, int] = {}
    for n in range(W.n_agents):
        remote = W.remote_support(n)
        if not remote:
            continue
        if n not in trees:
            raise TopologyError(f"agent {n} has remote targets but no routing tree", pair=(n, remote[0]))
        for m in remote:
            for e in trees[n].path_to[m]:
                loads[e] = loads.get(e, 0) + 1
    return loads


def link_capacity(trees: Mapping[int, RoutingTree], W: LogicalWeights) -> int:
    """C_max^T: twice the heaviest per-edge path count."""
    loads = edge_loads(trees, W)
    return 2 * max(loads.values(), default=0)


def metropolis_weights(g: PhysicalGraph) -> NDArray[np.float64]:
    """Doubly stochastic mixing matrix supported on graph edges plus the diagonal."""
    A = np.zeros((g.n_nodes, g.n_nodes))
    for i, j in g.edges:
        a = 1.0 / (1.0 + max(g.degree(i), g.degree(j)))
        A[i, j] = A[j, i] = a
    A[np.diag_indices_from(A)] = 1.0 - A.sum(axis=1)
    return A


def check_doubly_stochastic(A: NDArray[np.float64], tol: float = ROW_SUM_TOL) -> None:
    if np.any(A < -tol):
        raise ConfigurationError("mixing matrix has negative entries")
    rows, cols = A.sum(axis=1), A.sum(axis=0)
    if np.any(np.abs(rows - 1) > tol) or np.any(np.abs(cols - 1) > tol):
        raise ConfigurationError("mixing matrix is not doubly stochastic")


def mixing_alpha(A: NDArray[np.float64]) -> float:
    """Second-largest singular value of A, the contraction factor of consensus averaging."""
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[1]) if s.size > 1 else 0.0
