import math
from itertools import product

import networkx as nx
import numpy as np
import pytest

from network_model import (NetworkGraph, SdPair, TopologyError, generate_random_graph, load_topology,
                           parse_topology, sample_edge_attributes, validate_flow_constraints)
from tdpp_routing import (BaselineKind, CostModel, FailureReason, PathRecord, RoutingError, baseline_route,
                          cost_key, dijkstra_shortest_path, fidelity_floor_holds, format_decision_log,
                          node_costs, parse_decision_log, path_cost, path_maxima, priority_order,
                          purification_trigger, purify_selected_edge, tdpp_route, unsalvageable_edges,
                          yen_k_shortest_paths)

FIG3_PAIR = SdPair("s", "d")

TRIANGLE = """
node s 5
node m 5
node d 5
edge s d 3 0.9
edge s m 3 0.9
edge m d 3 0.9
"""


def fig3():
    return load_topology("fig3.topo")


def single_edge_path(fidelity, distance):
    return PathRecord(("a", "b"), (("a", "b"),), 0.0, ((fidelity, distance),))


def enumerate_paths(graph, pair, cost_model, costs=None):
    """Every simple path, sorted by rounded cost then node sequence."""
    paths = nx.all_simple_paths(graph.topology, pair.source, pair.destination)
    return sorted((tuple(p) for p in paths),
                  key=lambda p: (cost_key(path_cost(graph, p, cost_model, costs)), p))


def random_instance(seed, n_nodes=None, capacity=None):
    rng = np.random.default_rng(seed)
    n_nodes = n_nodes or int(rng.integers(4, 9))
    graph = generate_random_graph(n_nodes, 0.45, rng_seed=seed)
    for record in graph.edges.values():
        record.capacity_total = record.capacity_free = capacity or int(rng.integers(1, 3))
    for record in graph.nodes.values():
        record.memory_total = record.memory_free = int(rng.integers(1, 4))
    graph = sample_edge_attributes(graph, 0.8, 0.15, rng_seed=seed)
    names = sorted(graph.nodes)
    pairs = []
    for _ in range(int(rng.integers(1, 6))):
        i, j = rng.choice(len(names), size=2, replace=False)
        pairs.append(SdPair(names[i], names[j]))
    return graph, pairs


# Shortest paths

def test_dijkstra_adjacent_pair():
    path = dijkstra_shortest_path(parse_topology(TRIANGLE), SdPair("s", "d"), CostModel.HOP_COUNT)
    assert path.nodes == ("s", "d")
    assert path.edges == (("d", "s"),)
    assert path.cost == 1.0


def test_dijkstra_centrality_on_walkthrough():
    path = dijkstra_shortest_path(fig3(), FIG3_PAIR, CostModel.CENTRALITY_COST)
    assert path.nodes == ("s", "r2", "r3", "d")
    assert path.cost == pytest.approx(4.7222, abs=1e-4)


def test_dijkstra_hop_on_walkthrough():
    assert dijkstra_shortest_path(fig3(), FIG3_PAIR, CostModel.HOP_COUNT).nodes == ("s", "r1", "d")


def test_dijkstra_disconnected():
    graph = parse_topology("node a 1\nnode b 1\nnode c 1\nedge a b 1\n")
    assert dijkstra_shortest_path(graph, SdPair("a", "c")) is None


def test_dijkstra_lexicographic_tie_break():
    graph = parse_topology("node s 1\nnode x 1\nnode b 1\nnode d 1\n"
                           "edge s x 1\nedge x d 1\nedge s b 1\nedge b d 1\n")
    assert dijkstra_shortest_path(graph, SdPair("s", "d")).nodes == ("s", "b", "d")


def test_node_costs():
    costs = node_costs(fig3())
    assert costs["r1"] == pytest.approx(2.5)
    assert costs["s"] == pytest.approx(1.25)
    isolated = parse_topology("node a 1\nnode b 1\nnode c 1\nedge a b 1\n")
    assert node_costs(isolated)["c"] == math.inf


def test_yen_k1_matches_dijkstra():
    graph = fig3()
    for model in (CostModel.HOP_COUNT, CostModel.CENTRALITY_COST):
        paths = yen_k_shortest_paths(graph, FIG3_PAIR, 1, model)
        assert [p.nodes for p in paths] == [dijkstra_shortest_path(graph, FIG3_PAIR, model).nodes]


def test_yen_triangle():
    paths = yen_k_shortest_paths(parse_topology(TRIANGLE), SdPair("s", "d"), 2, CostModel.HOP_COUNT)
    assert [p.nodes for p in paths] == [("s", "d"), ("s", "m", "d")]


def test_yen_walkthrough_candidates():
    paths = yen_k_shortest_paths(fig3(), FIG3_PAIR, 2, CostModel.CENTRALITY_COST)
    assert [p.nodes for p in paths] == [("s", "r2", "r3", "d"), ("s", "r1", "d")]
    assert paths[1].cost == pytest.approx(5.0)
    assert len(yen_k_shortest_paths(fig3(), FIG3_PAIR, 10, CostModel.CENTRALITY_COST)) == 2


def test_yen_rejects_bad_k():
    with pytest.raises(RoutingError):
        yen_k_shortest_paths(fig3(), FIG3_PAIR, 0)


def test_yen_unknown_endpoint():
    with pytest.raises(TopologyError):
        yen_k_shortest_paths(fig3(), SdPair("s", "zz"), 2)


@pytest.mark.parametrize("cost_model", [CostModel.HOP_COUNT, CostModel.CENTRALITY_COST])
def test_yen_matches_exhaustive_enumeration(cost_model):
    for seed in range(50):
        graph = generate_random_graph(int(np.random.default_rng(seed).integers(3, 9)), 0.5, rng_seed=seed)
        names = sorted(graph.nodes)
        pair = SdPair(names[0], names[-1])
        costs = node_costs(graph) if cost_model is CostModel.CENTRALITY_COST else None
        expected = enumerate_paths(graph, pair, cost_model, costs)[:5]
        paths = yen_k_shortest_paths(graph, pair, 5, cost_model, costs)
        assert [p.nodes for p in paths] == expected, seed
        key_costs = [cost_key(p.cost) for p in paths]
        assert key_costs == sorted(key_costs)
        assert len(set(p.nodes for p in paths)) == len(paths)
        assert all(len(set(p.nodes)) == len(p.nodes) for p in paths)


# Purification

def test_purification_trigger():
    assert purification_trigger(0.64, 0.67)
    assert not purification_trigger(0.80, 0.60)
    assert purification_trigger(0.5, 0.5)


def test_fidelity_floor():
    assert fidelity_floor_holds(0.80, 0.60)
    assert not fidelity_floor_holds(0.64, 0.67)


def test_path_maxima_walkthrough():
    path = yen_k_shortest_paths(fig3(), FIG3_PAIR, 1, CostModel.CENTRALITY_COST)[0]
    assert path_maxima(path) == (0.67, 0.86)
    assert path_maxima(single_edge_path(0.7, 0.6)) == (0.6, 0.7)
    with pytest.raises(RoutingError):
        path_maxima(PathRecord(("a",), (), 0.0, ()))


def test_purify_selected_edge_walkthrough():
    path = yen_k_shortest_paths(fig3(), FIG3_PAIR, 1, CostModel.CENTRALITY_COST)[0]
    decision = purify_selected_edge(path)
    assert decision.edge == ("r2", "r3")
    assert decision.triggered
    assert decision.f_purified == pytest.approx(0.92, abs=0.01)
    assert decision.f_purified == pytest.approx(math.sqrt(0.86), abs=1e-12)
    assert decision.f_edge_before == 0.64
    assert decision.rounds == 1


@pytest.mark.parametrize("f_sel, expected", [(1.0, 1.0), (0.49, 0.7)])
def test_purify_selected_edge_values(f_sel, expected):
    decision = purify_selected_edge(single_edge_path(f_sel, 2 * (1 - f_sel)))
    assert decision.f_purified == pytest.approx(expected, abs=1e-12)
    assert decision.rounds == 1


def test_purification_never_degrades_edge():
    rng = np.random.default_rng(21)
    for _ in range(500):
        hops = int(rng.integers(1, 6))
        fidelities = np.clip(rng.normal(0.8, 0.15, hops), 0.01, 1.0)
        nodes = tuple(f"n{i}" for i in range(hops + 1))
        edges = tuple(zip(nodes, nodes[1:]))
        metrics = tuple((float(f), min(max(2 * (1 - float(f)), 0.0), 1.0)) for f in fidelities)
        decision = purify_selected_edge(PathRecord(nodes, edges, 0.0, metrics))
        before = dict(zip(edges, metrics))[decision.edge]
        assert decision.f_purified >= before[0]
        assert decision.d_edge_after <= before[1] + 1e-12


# TDPP

def test_tdpp_walkthrough():
    graph = fig3()
    outcome = tdpp_route(graph, [FIG3_PAIR], k=2, fidelity_threshold=0.5)[0]
    assert outcome.success
    assert outcome.path.nodes == ("s", "r2", "r3", "d")
    assert outcome.decision.edge == ("r2", "r3")
    assert outcome.decision.d_max == 0.67
    assert outcome.decision.f_sel_edge == 0.86
    assert outcome.path.edge_metrics[1][0] == pytest.approx(math.sqrt(0.86))
    assert outcome.e2e_fidelity == pytest.approx(0.8 * math.sqrt(0.86) * 0.86)
    assert outcome.trigger_flags == (False, True, False)
    assert graph.edge("r2", "r3").fidelity == 0.64
    assert graph.edge("r2", "r3").capacity_free == 9
    assert graph.edge("s", "r1").capacity_free == 10
    assert [graph.node(n).memory_free for n in ("s", "r2", "r3", "d", "r1")] == [19, 19, 19, 19, 20]


def test_tdpp_below_threshold_keeps_resources():
    graph = fig3()
    outcome = tdpp_route(graph, [FIG3_PAIR], k=2, fidelity_threshold=0.8)[0]
    assert not outcome.success
    assert outcome.failure_reason is FailureReason.FIDELITY_BELOW_THRESHOLD
    assert outcome.path is not None
    assert graph.edge("s", "r2").capacity_free == 10


def test_tdpp_no_path():
    graph = parse_topology("node a 1\nnode b 1\nnode c 1\nedge a b 1 0.9\n")
    outcome = tdpp_route(graph, [SdPair("a", "c")], k=3, fidelity_threshold=0.5)[0]
    assert outcome.failure_reason is FailureReason.NO_PATH
    assert not outcome.success


def test_tdpp_excludes_unsalvageable_edges():
    graph = parse_topology("node a 5\nnode b 5\nnode c 5\nedge a b 5 0.4\nedge b c 5 0.45\n")
    assert unsalvageable_edges(graph) == [("a", "b")]
    assert tdpp_route(graph, [SdPair("a", "b")], 3, 0.1)[0].failure_reason is FailureReason.NO_PATH
    assert tdpp_route(graph, [SdPair("b", "c")], 3, 0.1)[0].success


def test_tdpp_capacity_contention_reroutes():
    doc = "node a 5\nnode b 5\nnode c 5\nedge a b 1 0.95\nedge a c 1 0.95\nedge b c 1 0.95\n"
    pairs = [SdPair("a", "b"), SdPair("a", "b")]

    graph = parse_topology(doc)
    outcomes = tdpp_route(graph, pairs, k=2, fidelity_threshold=0.8)
    assert [o.path.nodes for o in outcomes] == [("a", "b"), ("a", "c", "b")]
    assert all(o.success for o in outcomes)
    assert validate_flow_constraints(parse_topology(doc), outcomes).ok

    # exhaustive check: no assignment routes more than two pairs
    base = parse_topology(doc)
    options = [None] + [tuple(p) for p in nx.all_simple_paths(base.topology, "a", "b")]
    best = 0
    for assignment in product(options, repeat=len(pairs)):
        usage = {}
        for path in filter(None, assignment):
            for u, v in zip(path, path[1:]):
                usage[frozenset((u, v))] = usage.get(frozenset((u, v)), 0) + 1
        if all(count <= 1 for count in usage.values()):
            best = max(best, sum(p is not None for p in assignment))
    assert sum(o.success for o in outcomes) == best

    outcomes = tdpp_route(parse_topology(doc), pairs, k=1, fidelity_threshold=0.8)
    assert outcomes[0].success
    assert outcomes[1].failure_reason is FailureReason.CAPACITY_EXHAUSTED


def test_tdpp_memory_exhausted():
    graph = parse_topology("node a 5\nnode b 1\nnode c 5\nedge a b 5 0.95\nedge b c 5 0.95\n")
    outcomes = tdpp_route(graph, [SdPair("a", "b"), SdPair("c", "b")], k=3, fidelity_threshold=0.5)
    assert outcomes[0].success
    assert outcomes[1].failure_reason is FailureReason.MEMORY_EXHAUSTED


def test_priority_order_by_closeness():
    graph = parse_topology("node a 5\nnode b 5\nnode c 5\nnode d 5\n"
                           "edge a b 5 0.9\nedge b c 5 0.9\nedge c d 5 0.9\n")
    pairs = [SdPair("a", "d"), SdPair("a", "b"), SdPair("c", "d"), SdPair("d", "a")]
    assert priority_order(graph, pairs) == [1, 2, 0, 3]
    outcomes = tdpp_route(graph, pairs, 2, 0.5)
    assert [o.pair_index for o in outcomes] == [0, 1, 2, 3]
    assert [o.pair for o in outcomes] == pairs


def test_tdpp_input_errors():
    graph = fig3()
    with pytest.raises(RoutingError):
        tdpp_route(graph, [SdPair("s", "zz")], 2, 0.5)
    with pytest.raises(RoutingError):
        tdpp_route(graph, [FIG3_PAIR], 2, 0.0)
    with pytest.raises(RoutingError):
        tdpp_route(graph, [FIG3_PAIR], 0, 0.5)
    with pytest.raises(RoutingError):
        tdpp_route(load_topology("us_backbone.topo"), [SdPair("n01", "n02")], 2, 0.5)


def test_tdpp_is_deterministic():
    for seed in range(10):
        graph, pairs = random_instance(seed)
        first = format_decision_log(tdpp_route(graph.copy(), pairs, 3, 0.6))
        second = format_decision_log(tdpp_route(graph.copy(), pairs, 3, 0.6))
        assert first == second


def test_tdpp_respects_constraints_on_random_instances():
    for seed in range(100):
        graph, pairs = random_instance(seed)
        routed = graph.copy()
        outcomes = tdpp_route(routed, pairs, 3, 0.5)
        report = validate_flow_constraints(graph, outcomes)
        assert report.ok, (seed, report.render())
        routed.check_invariants()
        for outcome in outcomes:
            if outcome.success:
                assert outcome.path is not None
                assert 0.0 < outcome.e2e_fidelity <= 1.0
                assert outcome.e2e_fidelity >= 0.5


def test_tdpp_dominates_baseline_on_shared_paths():
    compared = 0
    for seed in range(200):
        graph, pairs = random_instance(seed, capacity=20)
        tdpp = tdpp_route(graph.copy(), pairs, 3, 0.01)
        hop = baseline_route(graph.copy(), pairs, BaselineKind.HOP_SHORTEST_NO_PURIFICATION)
        for ours, theirs in zip(tdpp, hop):
            if ours.path and theirs.path and ours.path.nodes == theirs.path.nodes and any(ours.trigger_flags):
                assert ours.e2e_fidelity >= theirs.e2e_fidelity
                compared += 1
    assert compared > 0


@pytest.mark.parametrize("scale", [0.5, 0.25])
def test_path_selection_is_scale_invariant(scale):
    for seed in range(20):
        graph, pairs = random_instance(seed, capacity=20)
        scaled = NetworkGraph()
        for node_id, record in graph.nodes.items():
            scaled.add_node(node_id, record.memory_total, closeness=record.closeness or
                            graph.compute_closeness()[node_id])
        for key, record in graph.edges.items():
            scaled.add_edge(*key, record.capacity_total, record.fidelity, record.trace_distance)
        for record in scaled.nodes.values():
            record.closeness *= scale
        original = tdpp_route(graph.copy(), pairs, 3, 0.5)
        rescaled = tdpp_route(scaled, pairs, 3, 0.5)
        assert [o.path.nodes if o.path else None for o in original] == \
               [o.path.nodes if o.path else None for o in rescaled]


# Baselines

def test_baselines_agree_on_single_edge():
    graph = parse_topology("node a 2\nnode b 2\nedge a b 2 0.7\n")
    hop = baseline_route(graph.copy(), [SdPair("a", "b")], BaselineKind.HOP_SHORTEST_NO_PURIFICATION)[0]
    greedy = baseline_route(graph.copy(), [SdPair("a", "b")], BaselineKind.GREEDY_MAX_FIDELITY)[0]
    assert hop.path.nodes == greedy.path.nodes == ("a", "b")
    assert hop.e2e_fidelity == greedy.e2e_fidelity == 0.7
    assert hop.success and greedy.success


def test_hop_baseline_on_walkthrough():
    outcome = baseline_route(fig3(), [FIG3_PAIR])[0]
    assert outcome.path.nodes == ("s", "r1", "d")
    assert outcome.decision is None
    assert outcome.e2e_fidelity == pytest.approx(0.70 * 0.75)


def test_greedy_prefers_longer_high_fidelity_path():
    graph = parse_topology("node s 5\nnode a 5\nnode b 5\nnode d 5\n"
                           "edge s d 5 0.5\nedge s a 5 0.95\nedge a b 5 0.95\nedge b d 5 0.95\n")
    outcome = baseline_route(graph, [SdPair("s", "d")], BaselineKind.GREEDY_MAX_FIDELITY)[0]
    assert outcome.path.nodes == ("s", "a", "b", "d")


def test_greedy_matches_brute_force():
    for seed in range(30):
        graph, pairs = random_instance(seed, capacity=20)
        for pair in pairs:
            best = max(nx.all_simple_paths(graph.topology, pair.source, pair.destination),
                       key=lambda p: math.prod(graph.edge(u, v).fidelity for u, v in zip(p, p[1:])))
            outcome = baseline_route(graph.copy(), [pair], BaselineKind.GREEDY_MAX_FIDELITY)[0]
            assert outcome.e2e_fidelity == pytest.approx(
                math.prod(graph.edge(u, v).fidelity for u, v in zip(best, best[1:])), rel=1e-8)


def test_baseline_rejects_dead_link():
    graph = parse_topology("node a 2\nnode b 2\nedge a b 2 0.0\n")
    hop = baseline_route(graph, [SdPair("a", "b")], BaselineKind.HOP_SHORTEST_NO_PURIFICATION)[0]
    assert not hop.success
    assert hop.failure_reason is FailureReason.FIDELITY_BELOW_THRESHOLD
    assert hop.e2e_fidelity == 0.0
    assert graph.edge("a", "b").capacity_free == 2
    assert graph.node("a").memory_free == 2
    greedy = baseline_route(graph, [SdPair("a", "b")], BaselineKind.GREEDY_MAX_FIDELITY)[0]
    assert greedy.failure_reason is FailureReason.NO_PATH
    assert validate_flow_constraints(graph, [hop, greedy]).ok


def test_baseline_capacity_exhausted():
    graph = parse_topology("node a 5\nnode b 5\nedge a b 1 0.9\n")
    outcomes = baseline_route(graph, [SdPair("a", "b"), SdPair("b", "a")])
    assert outcomes[0].success
    assert outcomes[1].failure_reason is FailureReason.CAPACITY_EXHAUSTED


# Decision log

def test_decision_log_round_trip():
    graph = fig3()
    outcomes = tdpp_route(graph.copy(), [FIG3_PAIR, SdPair("r1", "r2")], 2, 0.5)
    text = format_decision_log(outcomes)
    first = text.splitlines()[0]
    assert "path=s,r2,r3,d" in first
    assert "purified_edge=r2,r3" in first
    assert "f_purified=0.927362" in first
    assert first.endswith("status=success")

    parsed = parse_decision_log(text, graph)
    assert [o.path.nodes for o in parsed] == [o.path.nodes for o in outcomes]
    assert [o.success for o in parsed] == [o.success for o in outcomes]
    assert parsed[0].decision.edge == ("r2", "r3")
    assert parsed[0].decision.f_purified == pytest.approx(outcomes[0].decision.f_purified, rel=1e-5)
    assert validate_flow_constraints(graph, parsed).ok


def test_decision_log_failures():
    graph = parse_topology("node a 1\nnode b 1\nnode c 1\nedge a b 1 0.9\n")
    outcomes = tdpp_route(graph.copy(), [SdPair("a", "c")], 2, 0.5)
    text = format_decision_log(outcomes)
    assert "status=no_path" in text
    assert parse_decision_log(text, graph)[0].failure_reason is FailureReason.NO_PATH


def test_decision_log_errors():
    graph = fig3()
    with pytest.raises(TopologyError):
        parse_decision_log("pair=0 source=s destination=zz path=- e2e=0 status=no_path\n", graph)
    with pytest.raises(TopologyError):
        parse_decision_log("pair=0 source=s destination=d path=s,r3,d e2e=0.5 status=success\n", graph)
    with pytest.raises(RoutingError):
        parse_decision_log("pair=0 source=s\n", graph)
    with pytest.raises(RoutingError):
        parse_decision_log("not a log line\n", graph)
