"""Routing-tree design: Steiner baseline and the exact sum-delay optimizer.

The sum-delay design minimizes ``Dist = sum_w delay(root -> w)`` over trees that contain
the root and every target, subject to the flow-conservation constraint system checked
by :func:`check_flow_constraints`. Dist of any tree is bounded below by the sum of
shortest-path distances, and that bound is met exactly by trees whose root-to-target paths
are all shortest paths. The branch-and-bound therefore searches over shortest-path
predecessor choices, using total tree edge delay as the secondary objective, and breaks
remaining ties lexicographically on the sorted edge list.
"""

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping

import networkx as nx

from ddam_sim.errors import InvariantViolation, ResourceError, TopologyError
from ddam_sim.topology import Edge, LogicalWeights, PhysicalGraph, RoutingTree, edge_key

logger = logging.getLogger(__name__)

EXACT_MAX_NODES = 20
EXACT_MAX_EDGES = 60
DEFAULT_NODE_BUDGET = 20_000

TreeMethod = Literal["steiner", "sumdelay"]


@dataclass
class SumDelayResult:
    tree: RoutingTree
    dist: int
    lower_bound: int
    edge_delay: int
    exact: bool
    nodes_explored: int
    # Relative gap of the secondary objective (edge delay) against its bound; 0 when exact.
    gap: float = 0.0


@dataclass
class FlowCheck:
    dist: int
    violations: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations


def _check_terminals(g: PhysicalGraph, root: int, terminals: Iterable[int]) -> list[int]:
    if not 0 <= root < g.n_nodes:
        raise TopologyError(f"root {root} is not a graph node", pair=(root, root))
    targets = sorted(set(terminals) - {root})
    for w in targets:
        if not 0 <= w < g.n_nodes:
            raise TopologyError(f"target {w} of root {root} is not a graph node", pair=(root, w))
        if not nx.has_path(g.nx_graph, root, w):
            raise TopologyError(f"target {w} is unreachable from root {root}", pair=(root, w))
    return targets


def steiner_tree(g: PhysicalGraph, root: int, terminals: Iterable[int]) -> RoutingTree:
    """Metric-closure MST 2-approximation of the minimum-delay Steiner tree."""
    targets = _check_terminals(g, root, terminals)
    if not targets:
        return RoutingTree.from_edges(g, root, (), ())
    required = sorted({root, *targets})
    paths: dict[int, dict[int, list[int]]] = {}
    closure = nx.Graph()
    for u in required:
        lengths, node_paths = nx.single_source_dijkstra(g.nx_graph, u, weight="delay")
        paths[u] = node_paths
        for v in required:
            if v > u:
                closure.add_edge(u, v, weight=lengths[v])
    skeleton = nx.minimum_spanning_tree(closure, weight="weight", algorithm="kruskal")

    expanded = nx.Graph()
    for u, v in sorted(edge_key(a, b) for a, b in skeleton.edges()):
        nodes = paths[u][v]
        for a, b in zip(nodes, nodes[1:]):
            expanded.add_edge(*edge_key(a, b), delay=g.delay(a, b))
    tree = nx.minimum_spanning_tree(expanded, weight="delay", algorithm="kruskal")

    keep = set(required)
    pruned = True
    while pruned:
        leaves = [x for x in sorted(tree.nodes) if tree.degree[x] == 1 and x not in keep]
        pruned = bool(leaves)
        tree.remove_nodes_from(leaves)
    return RoutingTree.from_edges(g, root, tree.edges(), targets)


def _shortest_path_dag(g: PhysicalGraph, root: int) -> tuple[dict[int, int], dict[int, list[int]]]:
    dist = nx.single_source_dijkstra_path_length(g.nx_graph, root, weight="delay")
    preds: dict[int, list[int]] = {}
    for v in dist:
        preds[v] = sorted(u for u in g.neighbors(v) if u in dist and dist[u] + g.delay(u, v) == dist[v])
    return dist, preds


def _attach_costs(
    g: PhysicalGraph, dist: Mapping[int, int], preds: Mapping[int, list[int]], in_tree: set[int]
) -> dict[int, int]:
    """Cheapest shortest-path-DAG route from the current tree to every node."""
    cost: dict[int, int] = {}
    for v in sorted(dist, key=lambda x: (dist[x], x)):
        if v in in_tree:
            cost[v] = 0
        else:
            cost[v] = min(cost[p] + g.delay(p, v) for p in preds[v])
    return cost


def _branch_paths(
    g: PhysicalGraph, preds: Mapping[int, list[int]], start: int, in_tree: set[int]
) -> list[list[tuple[int, int]]]:
    """All DAG paths from start back to the first tree node, as (child, parent) links."""
    routes: list[list[tuple[int, int]]] = []

    def walk(u: int, acc: list[tuple[int, int]]):
        for p in preds[u]:
            step = acc + [(u, p)]
            if p in in_tree:
                routes.append(step)
            else:
                walk(p, step)

    walk(start, [])
    return routes


def _greedy_parents(preds: Mapping[int, list[int]], root: int, targets: list[int]) -> dict[int, int]:
    parent: dict[int, int] = {}
    for w in targets:
        u = w
        while u != root and u not in parent:
            parent[u] = preds[u][0]
            u = parent[u]
    return parent


def _edges_of(parent: Mapping[int, int]) -> tuple[Edge, ...]:
    return tuple(sorted(edge_key(c, p) for c, p in parent.items()))


def _heuristic_tree(g: PhysicalGraph, root: int, targets: list[int], dist: Mapping[int, int]) -> RoutingTree:
    """Union of independent shortest paths, repaired into a tree by a shortest-path tree on the union."""
    union = nx.Graph()
    union.add_node(root)
    for w in targets:
        nodes = nx.dijkstra_path(g.nx_graph, root, w, weight="delay")
        for a, b in zip(nodes, nodes[1:]):
            union.add_edge(*edge_key(a, b), delay=g.delay(a, b))
    _, node_paths = nx.single_source_dijkstra(union, root, weight="delay")
    edges: set[Edge] = set()
    for w in targets:
        links = [edge_key(a, b) for a, b in zip(node_paths[w], node_paths[w][1:])]
        if sum(g.edge_delay[e] for e in links) != dist[w]:
            raise InvariantViolation(f"repaired path to {w} is not a shortest path")
        edges.update(links)
    return RoutingTree.from_edges(g, root, edges, targets)


def solve_sumdelay(
    g: PhysicalGraph,
    root: int,
    terminals: Iterable[int],
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> SumDelayResult:
    """Minimize the sum of root-to-target delays; exact at desk scale, heuristic beyond."""
    targets = _check_terminals(g, root, terminals)
    if not targets:
        tree = RoutingTree.from_edges(g, root, (), ())
        return SumDelayResult(tree, 0, 0, 0, True, 0)
    dist, preds = _shortest_path_dag(g, root)
    # Farthest targets first: their paths cover the most intermediate nodes.
    targets = sorted(targets, key=lambda w: (-dist[w], w))
    lower_bound = sum(dist[w] for w in targets)
    # Any feasible tree must reach the farthest target.
    edge_floor = max(dist[w] for w in targets)

    if g.n_nodes > EXACT_MAX_NODES or len(g.edges) > EXACT_MAX_EDGES:
        tree = _heuristic_tree(g, root, targets, dist)
        weight = tree.total_edge_delay(g)
        gap = (weight - edge_floor) / max(edge_floor, 1)
        logger.warning(
            "Graph with %s nodes/%s edges exceeds exact-solver scale; heuristic tree for root %s, "
            "edge-delay gap %.3f",
            g.n_nodes, len(g.edges), root, gap,
        )
        _assert_feasible(g, tree, targets)
        return SumDelayResult(tree, tree.sum_path_delay(), lower_bound, weight, False, 0, gap)

    incumbent_parent = _greedy_parents(preds, root, targets)
    incumbent_edges = _edges_of(incumbent_parent)
    incumbent_cost = sum(g.edge_delay[e] for e in incumbent_edges)

    counter = itertools.count()
    # (bound, cost, edges, tiebreak, parent map)
    frontier: list[tuple[int, int, tuple[Edge, ...], int, dict[int, int]]] = []
    heapq.heappush(frontier, (edge_floor, 0, (), next(counter), {}))
    explored = 0
    best: tuple[int, tuple[Edge, ...]] | None = None

    while frontier:
        bound, cost, edges, _, parent = heapq.heappop(frontier)
        if best is not None and bound > best[0]:
            break
        if bound > incumbent_cost:
            break
        explored += 1
        if explored > node_budget:
            partial = RoutingTree.from_edges(g, root, incumbent_edges, targets)
            raise ResourceError(
                f"sum-delay search for root {root} exceeded {node_budget} nodes; "
                f"best tree so far has edge delay {incumbent_cost}",
                partial_best=partial,
            )
        in_tree = {root, *parent}
        pending = [w for w in targets if w not in in_tree]
        if not pending:
            if best is None or (cost, edges) < best:
                best = (cost, edges)
            continue
        for route in _branch_paths(g, preds, pending[0], in_tree):
            child = dict(parent)
            added = 0
            for c, p in route:
                child[c] = p
                added += g.delay(c, p)
            child_cost = cost + added
            child_tree = {root, *child}
            remaining = [w for w in pending if w not in child_tree]
            if remaining:
                attach = _attach_costs(g, dist, preds, child_tree)
                child_bound = child_cost + max(attach[w] for w in remaining)
            else:
                child_bound = child_cost
            if child_bound > incumbent_cost:
                continue
            child_edges = _edges_of(child)
            if not remaining and (child_cost, child_edges) < (incumbent_cost, incumbent_edges):
                incumbent_cost, incumbent_edges = child_cost, child_edges
            heapq.heappush(frontier, (child_bound, child_cost, child_edges, next(counter), child))

    if best is None or (incumbent_cost, incumbent_edges) < best:
        best = (incumbent_cost, incumbent_edges)
    tree = RoutingTree.from_edges(g, root, best[1], targets)
    _assert_feasible(g, tree, targets)
    logger.debug("Sum-delay tree for root %s: Dist=%s, edge delay %s, %s nodes", root, lower_bound, best[0], explored)
    return SumDelayResult(tree, tree.sum_path_delay(), lower_bound, best[0], True, explored)


def sumdelay_tree(g: PhysicalGraph, root: int, terminals: Iterable[int], node_budget: int = DEFAULT_NODE_BUDGET) -> RoutingTree:
    return solve_sumdelay(g, root, terminals, node_budget).tree


def _assert_feasible(g: PhysicalGraph, tree: RoutingTree, targets: list[int]) -> None:
    check = check_flow_constraints(g, tree, targets)
    if not check.feasible:
        raise InvariantViolation(f"tree of root {tree.root} violates {check.violations}")


def check_flow_constraints(g: PhysicalGraph, tree: RoutingTree, terminals: Iterable[int]) -> FlowCheck:
    """Rebuild h, v and both flow families from a tree and test every constraint."""
    root = tree.root
    targets = sorted(set(terminals) - {root})
    n_total = g.n_nodes
    h = {e: int(e in tree.tree_edges) for e in g.edges}
    active = tree.nodes
    v = {i: int(i in active) for i in range(n_total)}
    violations: list[str] = []

    if any(v[w] != 1 for w in set(terminals) | {root}):
        violations.append("target activation")
    if sum(h.values()) != sum(v.values()) - 1:
        violations.append("tree edge count")
    if any(h[(i, j)] > v[i] or h[(i, j)] > v[j] for (i, j) in g.edges):
        violations.append("edge-node consistency")

    def net_out(flow: Mapping[tuple[int, int], int], i: int) -> int:
        out = sum(f for (a, _), f in flow.items() if a == i)
        into = sum(f for (_, b), f in flow.items() if b == i)
        return out - into

    dist = 0
    for w in targets:
        if w not in tree.path_to:
            violations.append(f"missing path to {w}")
            continue
        flow: dict[tuple[int, int], int] = {}
        u = root
        nodes = [root]
        for e in tree.path_to[w]:
            nxt = e[1] if e[0] == u else e[0]
            flow[(u, nxt)] = flow.get((u, nxt), 0) + 1
            nodes.append(nxt)
            u = nxt
        for (a, b), f in flow.items():
            if f + flow.get((b, a), 0) > h.get(edge_key(a, b), 0):
                violations.append(f"flow edge usage for {w}")
                break
        if net_out(flow, root) != 1 or net_out(flow, w) != -1:
            violations.append(f"flow endpoints for {w}")
        if any(net_out(flow, i) != 0 for i in set(nodes) - {root, w}):
            violations.append(f"flow conservation for {w}")
        dist += sum(g.delay(a, b) * f for (a, b), f in flow.items())

    # Connectivity flow: each tree edge oriented away from the root carries its subtree size.
    t = nx.Graph()
    t.add_node(root)
    t.add_edges_from(tree.tree_edges)
    conn: dict[tuple[int, int], int] = {}
    if nx.is_tree(t):
        oriented = nx.bfs_tree(t, root)
        for parent, child in oriented.edges():
            conn[(parent, child)] = len(nx.descendants(oriented, child)) + 1
        if net_out(conn, root) != sum(v.values()) - 1:
            violations.append("connectivity root flow")
        for i in range(n_total):
            if i != root and -net_out(conn, i) != v[i]:
                violations.append(f"connectivity balance at {i}")
                break
        if any(f > n_total * h[edge_key(a, b)] for (a, b), f in conn.items()):
            violations.append("connectivity capacity")
    else:
        violations.append("connectivity")
    return FlowCheck(dist, violations)


def design_trees(
    g: PhysicalGraph,
    W: LogicalWeights,
    method: TreeMethod = "sumdelay",
    node_budget: int = DEFAULT_NODE_BUDGET,
    accept_incumbent: bool = False,
) -> dict[int, RoutingTree]:
    """One routing tree per agent covering its remote targets.

    With ``accept_incumbent`` a sum-delay search that runs out of budget keeps its best
    tree so far instead of raising; that tree already attains the minimal Dist.
    """
    trees: dict[int, RoutingTree] = {}
    for n in range(W.n_agents):
        remote = W.remote_support(n)
        if method == "steiner":
            trees[n] = steiner_tree(g, n, remote)
            continue
        try:
            trees[n] = sumdelay_tree(g, n, remote, node_budget)
        except ResourceError as err:
            if not accept_incumbent:
                raise
            logger.warning("%s; keeping the incumbent tree", err)
            trees[n] = err.partial_best
    logger.info("Designed %s routing trees with the %s method", len(trees), method)
    return trees
