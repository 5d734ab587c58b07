import itertools

import networkx as nx
import numpy as np
import pytest

from ddam_sim.errors import ResourceError, TopologyError
from ddam_sim.topology import RoutingTree, delay_summary, graph_from_edge_list, link_capacity, validate_weights
from ddam_sim.trees import (
    check_flow_constraints,
    design_trees,
    solve_sumdelay,
    steiner_tree,
    sumdelay_tree,
)


def exhaustive_trees(g, root, terminals):
    """(min Dist, min total edge delay) over every tree containing root and the terminals."""
    required = {root, *terminals}
    best_dist = best_weight = None
    for r in range(len(required) - 1, g.n_nodes):
        for subset in itertools.combinations(g.edges, r):
            t = nx.Graph()
            t.add_node(root)
            t.add_edges_from(subset)
            if not required <= set(t.nodes) or not nx.is_tree(t):
                continue
            weight = sum(g.edge_delay[e] for e in subset)
            for e in subset:
                t.edges[e]["delay"] = g.edge_delay[e]
            lengths = nx.single_source_dijkstra_path_length(t, root, weight="delay")
            dist = sum(lengths[w] for w in terminals)
            best_dist = dist if best_dist is None else min(best_dist, dist)
            best_weight = weight if best_weight is None else min(best_weight, weight)
    return best_dist, best_weight


def random_instances(count, max_nodes=8, max_edges=12, seed=0):
    rng = np.random.default_rng(seed)
    found = 0
    while found < count:
        n = int(rng.integers(4, max_nodes + 1))
        base = nx.gnp_random_graph(n, 0.45, seed=int(rng.integers(1 << 30)))
        if not nx.is_connected(base) or base.number_of_edges() > max_edges:
            continue
        g = graph_from_edge_list(n, base.edges())
        root = int(rng.integers(n))
        others = [v for v in range(n) if v != root]
        k = int(rng.integers(2, min(4, len(others)) + 1))
        terminals = sorted(int(x) for x in rng.choice(others, size=k, replace=False))
        found += 1
        yield g, root, terminals


def star(n_leaves=4, delays=None):
    delays = delays or [1] * n_leaves
    return graph_from_edge_list(n_leaves + 1, [(0, i + 1, d) for i, d in enumerate(delays)])


def test_steiner_on_a_star_uses_the_star_edges():
    g = star()
    t = steiner_tree(g, 0, [1, 2, 3])
    assert t.tree_edges == frozenset({(0, 1), (0, 2), (0, 3)})


def test_steiner_on_a_path_spans_the_whole_path():
    g = graph_from_edge_list(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    t = steiner_tree(g, 0, [4])
    assert t.tree_edges == frozenset(g.edges)


def test_sumdelay_on_a_star_is_the_star():
    g = star(delays=[1, 2, 3, 1])
    result = solve_sumdelay(g, 0, [1, 2, 3, 4])
    assert result.tree.tree_edges == frozenset(g.edges)
    assert result.dist == 7
    assert result.exact


def test_sumdelay_on_a_tree_graph_is_the_induced_subtree():
    g = graph_from_edge_list(6, [(0, 1), (1, 2), (1, 3), (3, 4), (0, 5)])
    t = sumdelay_tree(g, 0, [2, 4])
    assert t.tree_edges == frozenset({(0, 1), (1, 2), (1, 3), (3, 4)})
    assert t.sum_path_delay() == 2 + 3


def test_sumdelay_beats_the_lightest_tree_on_path_sums():
    # The chain 0-1-2-3 is the lightest tree; the direct 0-3 link shortens one path.
    g = graph_from_edge_list(4, [(0, 1), (1, 2), (2, 3), (0, 3, 2)])
    steiner = steiner_tree(g, 0, [1, 2, 3])
    optimal = sumdelay_tree(g, 0, [1, 2, 3])
    assert steiner.tree_edges == frozenset({(0, 1), (1, 2), (2, 3)})
    assert steiner.sum_path_delay() == 1 + 2 + 3
    assert optimal.tree_edges == frozenset({(0, 1), (1, 2), (0, 3)})
    assert optimal.sum_path_delay() == 1 + 2 + 2


def test_empty_terminal_set_gives_the_root_only_tree():
    g = star()
    for t in (steiner_tree(g, 2, []), sumdelay_tree(g, 2, [2])):
        assert t.tree_edges == frozenset()
        assert t.nodes == {2}


def test_unknown_terminal_names_the_pair():
    g = star()
    with pytest.raises(TopologyError) as err:
        steiner_tree(g, 0, [9])
    assert err.value.pair == (0, 9)
    with pytest.raises(TopologyError):
        sumdelay_tree(g, 0, [9])


def test_sumdelay_matches_exhaustive_enumeration():
    for g, root, terminals in random_instances(100, seed=5):
        best_dist, best_weight = exhaustive_trees(g, root, terminals)
        result = solve_sumdelay(g, root, terminals)
        steiner = steiner_tree(g, root, terminals)
        assert result.dist == best_dist
        assert result.dist == result.lower_bound
        assert result.tree.sum_path_delay() <= steiner.sum_path_delay()
        assert steiner.total_edge_delay(g) <= 2 * best_weight
        assert check_flow_constraints(g, result.tree, terminals).feasible


def test_optimizer_round_trips_never_exceed_steiner_on_random_networks():
    for g, root, terminals in random_instances(30, max_nodes=8, seed=11):
        W = np.zeros((g.n_nodes, g.n_nodes))
        W[root, [root, *terminals]] = 1.0 / (len(terminals) + 1)
        for n in range(g.n_nodes):
            if n != root:
                W[n, n] = 1.0
        W = validate_weights(W)
        star_trees = design_trees(g, W, "sumdelay")
        steiner_trees = design_trees(g, W, "steiner")
        ours = delay_summary(star_trees[root], W.support(root))
        theirs = delay_summary(steiner_trees[root], W.support(root))
        assert ours.tau_sum <= theirs.tau_sum


def test_sumdelay_is_deterministic():
    g = graph_from_edge_list(6, [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (1, 4), (2, 5), (4, 5)])
    first = sumdelay_tree(g, 0, [3, 4, 5])
    second = sumdelay_tree(g, 0, [3, 4, 5])
    assert first.tree_edges == second.tree_edges


def test_budget_exhaustion_reports_the_incumbent():
    g = nx.grid_2d_graph(3, 3)
    index = {v: i for i, v in enumerate(sorted(g.nodes))}
    grid = graph_from_edge_list(9, [(index[a], index[b]) for a, b in g.edges()])
    with pytest.raises(ResourceError) as err:
        solve_sumdelay(grid, 0, [4, 5, 7, 8], node_budget=0)
    partial = err.value.partial_best
    assert isinstance(partial, RoutingTree)
    assert partial.sum_path_delay() == 2 + 3 + 3 + 4


def test_design_trees_keeps_the_incumbent_when_asked():
    g = nx.grid_2d_graph(3, 3)
    index = {v: i for i, v in enumerate(sorted(g.nodes))}
    grid = graph_from_edge_list(9, [(index[a], index[b]) for a, b in g.edges()])
    W = np.eye(9)
    W[0] = 0.0
    W[0, [0, 4, 8]] = 1.0 / 3.0
    W = validate_weights(W)
    with pytest.raises(ResourceError):
        design_trees(grid, W, "sumdelay", node_budget=0)
    trees = design_trees(grid, W, "sumdelay", node_budget=0, accept_incumbent=True)
    assert trees[0].sum_path_delay() == 2 + 4


def test_large_graphs_fall_back_to_the_shortest_path_heuristic():
    n = 24
    edges = [(i, i + 1) for i in range(n - 1)] + [(0, n - 1), (0, 12), (6, 18)]
    g = graph_from_edge_list(n, edges)
    result = solve_sumdelay(g, 0, [5, 12, 17, 20])
    assert not result.exact
    assert result.dist == result.lower_bound
    assert check_flow_constraints(g, result.tree, [5, 12, 17, 20]).feasible


def test_flow_checker_flags_an_uncovered_target():
    g = graph_from_edge_list(3, [(0, 1), (1, 2)])
    partial = RoutingTree.from_edges(g, 0, [(0, 1)], [1])
    check = check_flow_constraints(g, partial, [1, 2])
    assert not check.feasible
    assert "target activation" in check.violations
    assert "missing path to 2" in check.violations


def test_flow_checker_reports_dist():
    g = graph_from_edge_list(4, [(0, 1, 2), (1, 2, 1), (1, 3, 3)])
    t = RoutingTree.from_edges(g, 0, g.edges, [2, 3])
    check = check_flow_constraints(g, t, [2, 3])
    assert check.feasible
    assert check.dist == 3 + 5


def test_identity_weights_give_empty_trees_and_no_load():
    g = star()
    W = validate_weights(np.eye(5))
    for method in ("steiner", "sumdelay"):
        trees = design_trees(g, W, method)
        assert all(t.tree_edges == frozenset() for t in trees.values())
        assert link_capacity(trees, W) == 0


def test_center_of_a_star_gets_the_same_tree_from_both_designs():
    g = star()
    W = np.eye(5)
    W[0] = 0.2
    W = validate_weights(W)
    assert design_trees(g, W, "steiner")[0].tree_edges == design_trees(g, W, "sumdelay")[0].tree_edges
