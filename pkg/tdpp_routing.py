#!/usr/bin/env python3
"""
Path finding and purification decisions: Dijkstra, Yen's K-shortest loopless
paths, the trace-distance based path purification (TDPP) router and two
baseline routers.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from network_model import (EdgeKey, NetworkGraph, SdPair, TopologyError, closeness_centrality,
                           coupled_trace_distance, edge_key)

logger = logging.getLogger(__name__)

# Costs are compared after rounding so mathematically equal sums tie exactly
COST_DIGITS = 9


class RoutingError(ValueError):
    """Invalid routing request or malformed decision log."""


class CostModel(Enum):
    HOP_COUNT = "hop_count"
    CENTRALITY_COST = "centrality_cost"
    NEG_LOG_FIDELITY = "neg_log_fidelity"


class BaselineKind(Enum):
    HOP_SHORTEST_NO_PURIFICATION = "hop_shortest_no_purification"
    GREEDY_MAX_FIDELITY = "greedy_max_fidelity"


class FailureReason(Enum):
    NO_PATH = "no_path"
    CAPACITY_EXHAUSTED = "capacity_exhausted"
    MEMORY_EXHAUSTED = "memory_exhausted"
    FIDELITY_BELOW_THRESHOLD = "fidelity_below_threshold"


@dataclass(frozen=True)
class PathRecord:
    nodes: Tuple[str, ...]
    edges: Tuple[EdgeKey, ...]
    cost: float
    edge_metrics: Tuple[Tuple[Optional[float], Optional[float]], ...]

    @property
    def hops(self) -> int:
        return len(self.edges)

    def __str__(self):
        return "->".join(self.nodes)


@dataclass(frozen=True)
class PurificationDecision:
    edge: EdgeKey
    triggered: bool
    d_max: float
    f_sel_edge: float
    f_purified: float
    rounds: int
    f_edge_before: float
    d_edge_after: float


@dataclass(frozen=True)
class RoutingOutcome:
    pair: SdPair
    path: Optional[PathRecord]
    decision: Optional[PurificationDecision]
    e2e_fidelity: float
    success: bool
    failure_reason: Optional[FailureReason] = None
    pair_index: int = 0
    slots_required: int = 1
    trigger_flags: Tuple[bool, ...] = ()
    floor_flags: Tuple[bool, ...] = ()


# Costs

def node_costs(graph: NetworkGraph) -> Dict[str, float]:
    """1 / C_v for every node; isolated nodes are unusable (infinite cost)."""
    costs = {}
    for node_id in sorted(graph.nodes):
        closeness = closeness_centrality(graph, node_id)
        costs[node_id] = 1.0 / closeness if closeness > 0 else math.inf
    return costs


def _edge_weight(graph: NetworkGraph, cost_model: CostModel,
                 costs: Optional[Dict[str, float]]) -> Callable[[str, str], float]:
    if cost_model is CostModel.HOP_COUNT:
        return lambda u, v: 1.0
    if cost_model is CostModel.CENTRALITY_COST:
        # Half of each endpoint's node cost per edge; path endpoints are topped up in path_cost
        return lambda u, v: (costs[u] + costs[v]) / 2

    def neg_log(u, v):
        fidelity = graph.edge(u, v).fidelity
        return -math.log(fidelity) if fidelity else math.inf
    return neg_log


def path_cost(graph: NetworkGraph, nodes: Sequence[str], cost_model: CostModel,
              costs: Optional[Dict[str, float]] = None) -> float:
    if cost_model is CostModel.CENTRALITY_COST and costs is None:
        costs = node_costs(graph)
    weight = _edge_weight(graph, cost_model, costs)
    total = 0.0
    for u, v in zip(nodes, nodes[1:]):
        total += weight(u, v)
    if cost_model is CostModel.CENTRALITY_COST:
        total += (costs[nodes[0]] + costs[nodes[-1]]) / 2
    return total


def cost_key(cost: float) -> float:
    return round(cost, COST_DIGITS)


def build_path(graph: NetworkGraph, nodes: Sequence[str], cost_model: CostModel,
               costs: Optional[Dict[str, float]] = None) -> PathRecord:
    nodes = tuple(nodes)
    edges = tuple(edge_key(u, v) for u, v in zip(nodes, nodes[1:]))
    metrics = tuple((graph.edges[k].fidelity, graph.edges[k].trace_distance) for k in edges)
    return PathRecord(nodes, edges, path_cost(graph, nodes, cost_model, costs), metrics)


# Shortest paths

def _dijkstra(graph: NetworkGraph, source: str, target: str, weight: Callable[[str, str], float],
              banned_nodes: FrozenSet[str] = frozenset(),
              banned_edges: FrozenSet[EdgeKey] = frozenset()) -> Optional[Tuple[str, ...]]:
    """Minimum-weight path, ties broken by the lexicographic node-id sequence."""
    heap = [(0.0, (source,), 0.0)]
    best = {source: (0.0, (source,))}
    done = set()
    while heap:
        key, path, total = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == target:
            return path
        for neighbor in graph.neighbors(node):
            if neighbor in done or neighbor in banned_nodes or edge_key(node, neighbor) in banned_edges:
                continue
            step = weight(node, neighbor)
            if math.isinf(step):
                continue
            candidate = (cost_key(total + step), path + (neighbor,))
            if neighbor not in best or candidate < best[neighbor]:
                best[neighbor] = candidate
                heapq.heappush(heap, (candidate[0], candidate[1], total + step))
    return None


def dijkstra_shortest_path(graph: NetworkGraph, pair: SdPair, cost_model: CostModel = CostModel.HOP_COUNT,
                           costs: Optional[Dict[str, float]] = None) -> Optional[PathRecord]:
    graph.validate_pair(pair)
    if cost_model is CostModel.CENTRALITY_COST and costs is None:
        costs = node_costs(graph)
    nodes = _dijkstra(graph, pair.source, pair.destination, _edge_weight(graph, cost_model, costs))
    if nodes is None:
        return None
    return build_path(graph, nodes, cost_model, costs)


def yen_k_shortest_paths(graph: NetworkGraph, pair: SdPair, k: int,
                         cost_model: CostModel = CostModel.HOP_COUNT,
                         costs: Optional[Dict[str, float]] = None) -> List[PathRecord]:
    """Up to k loopless paths in non-decreasing (cost, node sequence) order."""
    if k < 1:
        raise RoutingError("k must be at least 1")
    graph.validate_pair(pair)
    if cost_model is CostModel.CENTRALITY_COST and costs is None:
        costs = node_costs(graph)
    weight = _edge_weight(graph, cost_model, costs)

    first = _dijkstra(graph, pair.source, pair.destination, weight)
    if first is None:
        return []
    accepted = [first]
    seen = {first}
    candidates = []

    while len(accepted) < k:
        previous = accepted[-1]
        for i in range(len(previous) - 1):
            spur_node = previous[i]
            root = previous[:i + 1]
            banned_edges = frozenset(edge_key(p[i], p[i + 1]) for p in accepted
                                     if len(p) > i + 1 and p[:i + 1] == root)
            spur = _dijkstra(graph, spur_node, pair.destination, weight,
                             frozenset(root[:-1]), banned_edges)
            if spur is None:
                continue
            total = root[:-1] + spur
            if total not in seen:
                seen.add(total)
                heapq.heappush(candidates, (cost_key(path_cost(graph, total, cost_model, costs)), total))
        if not candidates:
            break
        _, nodes = heapq.heappop(candidates)
        accepted.append(nodes)

    return [build_path(graph, nodes, cost_model, costs) for nodes in accepted]


# Purification

def purification_trigger(fidelity: float, trace_distance: float) -> bool:
    """Purify unless the edge's trace distance is below its fidelity."""
    return trace_distance >= fidelity


def fidelity_floor_holds(fidelity: float, trace_distance: float) -> bool:
    """F >= 1 - D/2, recorded alongside the trigger."""
    return fidelity >= 1.0 - trace_distance / 2


def path_maxima(path: PathRecord) -> Tuple[float, float]:
    """(largest edge trace distance, largest edge fidelity) along the path."""
    if not path.edges:
        raise RoutingError("path has no edges")
    d_max = max(d for _, d in path.edge_metrics)
    f_sel_edge = max(f for f, _ in path.edge_metrics)
    return d_max, f_sel_edge


def purify_selected_edge(path: PathRecord) -> PurificationDecision:
    """Pump the edge with the largest trace distance to sqrt(F_sel)."""
    d_max, f_sel_edge = path_maxima(path)
    index = next(i for i, (_, d) in enumerate(path.edge_metrics) if d == d_max)
    f_purified = math.sqrt(f_sel_edge)
    return PurificationDecision(
        edge=path.edges[index],
        triggered=True,
        d_max=d_max,
        f_sel_edge=f_sel_edge,
        f_purified=f_purified,
        rounds=1,
        f_edge_before=path.edge_metrics[index][0],
        d_edge_after=coupled_trace_distance(f_purified),
    )


def apply_decision(path: PathRecord, decision: PurificationDecision) -> PathRecord:
    """Path copy whose selected edge carries the purified fidelity and trace distance."""
    metrics = tuple((decision.f_purified, decision.d_edge_after) if key == decision.edge else metric
                    for key, metric in zip(path.edges, path.edge_metrics))
    return replace(path, edge_metrics=metrics)


def e2e_fidelity(path: PathRecord) -> float:
    """Multiplicative composition across the swapped edges."""
    return math.prod(f for f, _ in path.edge_metrics)


# Routers

def _require_sampled(graph: NetworkGraph):
    for key, record in graph.edges.items():
        if not record.is_sampled:
            raise RoutingError(f"edge {key[0]}-{key[1]} has no fidelity/trace distance; sample it first")


def _check_pairs(graph: NetworkGraph, pairs: Sequence[SdPair]):
    for pair in pairs:
        try:
            graph.validate_pair(pair)
        except TopologyError as exc:
            raise RoutingError(f"invalid pair {pair}: {exc}") from None


def _blocking_reason(graph: NetworkGraph, path: PathRecord) -> Optional[FailureReason]:
    if any(graph.edges[key].capacity_free < 1 for key in path.edges):
        return FailureReason.CAPACITY_EXHAUSTED
    if any(graph.nodes[node_id].memory_free < 1 for node_id in path.nodes):
        return FailureReason.MEMORY_EXHAUSTED
    return None


def _reserve(graph: NetworkGraph, path: PathRecord):
    for key in path.edges:
        graph.edges[key].capacity_free -= 1
    for node_id in path.nodes:
        graph.nodes[node_id].memory_free -= 1


def unsalvageable_edges(graph: NetworkGraph) -> List[EdgeKey]:
    """Edges whose trace distance stays at or above fidelity even after one purification."""
    excluded = []
    for key in sorted(graph.edges):
        purified = math.sqrt(graph.edges[key].fidelity)
        if purification_trigger(purified, coupled_trace_distance(purified)):
            excluded.append(key)
    return excluded


def priority_order(graph: NetworkGraph, pairs: Sequence[SdPair]) -> List[int]:
    """Pair indices by descending max endpoint closeness, ties in declaration order."""
    def key(index):
        pair = pairs[index]
        return (-max(closeness_centrality(graph, pair.source),
                     closeness_centrality(graph, pair.destination)), index)
    return sorted(range(len(pairs)), key=key)


def tdpp_route(graph: NetworkGraph, pairs: Sequence[SdPair], k: int = 3,
               fidelity_threshold: float = 0.8) -> List[RoutingOutcome]:
    """Route pairs with closeness-based K-shortest paths and one purification per path.

    Resource counters on ``graph`` are consumed; pass a private copy.
    Outcomes are returned in pair declaration order.
    """
    if not 0.0 < fidelity_threshold <= 1.0:
        raise RoutingError(f"fidelity threshold must lie in (0, 1], got {fidelity_threshold!r}")
    if k < 1:
        raise RoutingError("k must be at least 1")
    _check_pairs(graph, pairs)
    _require_sampled(graph)

    costs = node_costs(graph)
    excluded = unsalvageable_edges(graph)
    auxiliary = graph.without_edges(excluded)
    if excluded:
        logger.debug("auxiliary graph drops %d edges: %s", len(excluded), excluded)

    outcomes: Dict[int, RoutingOutcome] = {}
    for index in priority_order(graph, pairs):
        pair = pairs[index]
        candidates = yen_k_shortest_paths(auxiliary, pair, k, CostModel.CENTRALITY_COST, costs)
        if not candidates:
            outcomes[index] = RoutingOutcome(pair, None, None, 0.0, False, FailureReason.NO_PATH, index)
            logger.info("pair %d %s: no path", index, pair)
            continue

        chosen, reasons = None, []
        for candidate in candidates:
            reason = _blocking_reason(graph, candidate)
            if reason is None:
                chosen = build_path(graph, candidate.nodes, CostModel.CENTRALITY_COST, costs)
                break
            reasons.append(reason)
        if chosen is None:
            reason = (FailureReason.CAPACITY_EXHAUSTED if FailureReason.CAPACITY_EXHAUSTED in reasons
                      else FailureReason.MEMORY_EXHAUSTED)
            outcomes[index] = RoutingOutcome(pair, None, None, 0.0, False, reason, index)
            logger.info("pair %d %s: %s", index, pair, reason.value)
            continue

        triggers = tuple(purification_trigger(f, d) for f, d in chosen.edge_metrics)
        floors = tuple(fidelity_floor_holds(f, d) for f, d in chosen.edge_metrics)
        if any(triggers):
            decision = purify_selected_edge(chosen)
            chosen = apply_decision(chosen, decision)
        else:
            d_max, f_sel_edge = path_maxima(chosen)
            index_max = next(i for i, (_, d) in enumerate(chosen.edge_metrics) if d == d_max)
            f_edge, d_edge = chosen.edge_metrics[index_max]
            decision = PurificationDecision(chosen.edges[index_max], False, d_max, f_sel_edge,
                                            f_edge, 0, f_edge, d_edge)

        fidelity = e2e_fidelity(chosen)
        success = fidelity >= fidelity_threshold
        if success:
            _reserve(graph, chosen)
        outcome = RoutingOutcome(pair, chosen, decision, fidelity, success,
                                 None if success else FailureReason.FIDELITY_BELOW_THRESHOLD,
                                 index, trigger_flags=triggers, floor_flags=floors)
        outcomes[index] = outcome
        logger.info("%s", format_decision_line(outcome))

    return [outcomes[i] for i in range(len(pairs))]


def baseline_route(graph: NetworkGraph, pairs: Sequence[SdPair],
                   kind: BaselineKind = BaselineKind.HOP_SHORTEST_NO_PURIFICATION) -> List[RoutingOutcome]:
    """Single shortest path per pair, no purification, no fidelity admission check."""
    _check_pairs(graph, pairs)
    _require_sampled(graph)
    cost_model = (CostModel.HOP_COUNT if kind is BaselineKind.HOP_SHORTEST_NO_PURIFICATION
                  else CostModel.NEG_LOG_FIDELITY)

    outcomes = []
    for index, pair in enumerate(pairs):
        path = dijkstra_shortest_path(graph, pair, cost_model)
        if path is None:
            outcomes.append(RoutingOutcome(pair, None, None, 0.0, False, FailureReason.NO_PATH, index))
            continue
        reason = _blocking_reason(graph, path)
        if reason is not None:
            outcomes.append(RoutingOutcome(pair, None, None, 0.0, False, reason, index))
            continue
        if e2e_fidelity(path) <= 0.0:
            outcomes.append(RoutingOutcome(pair, path, None, 0.0, False,
                                           FailureReason.FIDELITY_BELOW_THRESHOLD, index))
            continue
        _reserve(graph, path)
        outcome = RoutingOutcome(pair, path, None, e2e_fidelity(path), True, None, index,
                                 trigger_flags=tuple(purification_trigger(f, d) for f, d in path.edge_metrics),
                                 floor_flags=tuple(fidelity_floor_holds(f, d) for f, d in path.edge_metrics))
        outcomes.append(outcome)
        logger.debug("%s", format_decision_line(outcome))
    return outcomes


# Decision log

def _flags(values: Iterable[bool]) -> str:
    text = "".join("1" if v else "0" for v in values)
    return text or "-"


def format_decision_line(outcome: RoutingOutcome) -> str:
    fields = [
        f"pair={outcome.pair_index}",
        f"source={outcome.pair.source}",
        f"destination={outcome.pair.destination}",
        f"path={','.join(outcome.path.nodes) if outcome.path else '-'}",
    ]
    decision = outcome.decision
    if decision is not None:
        fields += [
            f"d_max={decision.d_max:.6g}",
            f"f_sel_edge={decision.f_sel_edge:.6g}",
            f"f_purified={decision.f_purified:.6g}",
            f"purified_edge={','.join(decision.edge) if decision.triggered else '-'}",
            f"f_edge_before={decision.f_edge_before:.6g}",
            f"rounds={decision.rounds}",
        ]
    fields += [
        f"trigger={_flags(outcome.trigger_flags)}",
        f"floor={_flags(outcome.floor_flags)}",
        f"e2e={outcome.e2e_fidelity:.6g}",
        f"status={'success' if outcome.success else outcome.failure_reason.value}",
    ]
    return " ".join(fields)


def format_decision_log(outcomes: Iterable[RoutingOutcome]) -> str:
    return "".join(format_decision_line(outcome) + "\n" for outcome in outcomes)


def parse_decision_log(text: str, graph: NetworkGraph) -> List[RoutingOutcome]:
    """Rebuild outcomes from a decision log; unknown nodes or edges raise TopologyError."""
    outcomes = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            fields = dict(token.split("=", 1) for token in line.split())
            pair = SdPair(fields["source"], fields["destination"])
            status = fields["status"]
            success = status == "success"
            reason = None if success else FailureReason(status)
            index = int(fields["pair"])
            e2e = float(fields["e2e"])
        except (KeyError, ValueError) as exc:
            raise RoutingError(f"line {line_no}: malformed decision log entry ({exc})") from None

        for endpoint in (pair.source, pair.destination):
            graph.node(endpoint)
        path = None
        if fields.get("path", "-") != "-":
            nodes = fields["path"].split(",")
            for u, v in zip(nodes, nodes[1:]):
                graph.edge(u, v)
            path = build_path(graph, nodes, CostModel.HOP_COUNT)

        decision = None
        if "d_max" in fields:
            try:
                triggered = fields["purified_edge"] != "-"
                edge = tuple(fields["purified_edge"].split(",")) if triggered else path.edges[0]
                if triggered:
                    graph.edge(*edge)
                f_purified = float(fields["f_purified"])
                decision = PurificationDecision(
                    edge=edge_key(*edge), triggered=triggered, d_max=float(fields["d_max"]),
                    f_sel_edge=float(fields["f_sel_edge"]), f_purified=f_purified,
                    rounds=int(fields["rounds"]), f_edge_before=float(fields["f_edge_before"]),
                    d_edge_after=coupled_trace_distance(f_purified))
            except (KeyError, ValueError, TypeError, AttributeError) as exc:
                raise RoutingError(f"line {line_no}: malformed purification fields ({exc})") from None
        outcomes.append(RoutingOutcome(pair, path, decision, e2e, success, reason, index))
    return outcomes
