#!/usr/bin/env python3
"""
Quantum network graph: node memory, per-edge EPR capacity and quantum
attributes, closeness centrality, topology documents and constraint checks.
"""
from __future__ import annotations

import copy
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Tuple, Union

import networkx as nx
import numpy as np

from quantum_core import DensityMatrix, fidelity_uhlmann, trace_distance

if TYPE_CHECKING:
    from tdpp_routing import RoutingOutcome

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"

MIN_SAMPLED_FIDELITY = 0.01
MAX_CONNECT_RETRIES = 1000

EdgeKey = Tuple[str, str]


class TopologyError(ValueError):
    """Malformed topology document or reference to an unknown node/edge."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


def edge_key(u: str, v: str) -> EdgeKey:
    return (u, v) if u <= v else (v, u)


def coupled_trace_distance(fidelity: float) -> float:
    """Scalar-mode coupling D = clamp(2(1 - F), 0, 1)."""
    return min(max(2.0 * (1.0 - fidelity), 0.0), 1.0)


@dataclass
class NodeRecord:
    id: str
    memory_total: int
    memory_free: int
    closeness: Optional[float] = None
    closeness_pinned: bool = False


@dataclass
class EdgeRecord:
    u: str
    v: str
    capacity_total: int
    capacity_free: int
    fidelity: Optional[float] = None
    trace_distance: Optional[float] = None
    rho: Optional[DensityMatrix] = None
    sigma: Optional[DensityMatrix] = None

    @property
    def key(self) -> EdgeKey:
        return edge_key(self.u, self.v)

    @property
    def has_states(self) -> bool:
        return self.rho is not None and self.sigma is not None

    @property
    def is_sampled(self) -> bool:
        return self.fidelity is not None and self.trace_distance is not None


@dataclass(frozen=True)
class SdPair:
    source: str
    destination: str

    def __str__(self):
        return f"{self.source}->{self.destination}"


class NetworkGraph:
    """Undirected simple graph of NodeRecords and EdgeRecords.

    The networkx graph carries the topology; the records carry the mutable
    resource counters and the quantum attributes.
    """

    def __init__(self):
        self.nodes: Dict[str, NodeRecord] = {}
        self.edges: Dict[EdgeKey, EdgeRecord] = {}
        self.topology = nx.Graph()

    def add_node(self, node_id: str, memory_total: int, closeness: Optional[float] = None) -> NodeRecord:
        if node_id in self.nodes:
            raise TopologyError(f"duplicate node {node_id!r}")
        if memory_total < 0:
            raise TopologyError(f"node {node_id!r} has negative memory")
        record = NodeRecord(node_id, memory_total, memory_total,
                            closeness=closeness, closeness_pinned=closeness is not None)
        self.nodes[node_id] = record
        self.topology.add_node(node_id)
        self._invalidate_closeness()
        return record

    def add_edge(self, u: str, v: str, capacity: int, fidelity: Optional[float] = None,
                 trace_distance: Optional[float] = None) -> EdgeRecord:
        if u == v:
            raise TopologyError(f"self-loop on {u!r}")
        for endpoint in (u, v):
            if endpoint not in self.nodes:
                raise TopologyError(f"dangling endpoint {endpoint!r}")
        key = edge_key(u, v)
        if key in self.edges:
            raise TopologyError(f"duplicate edge {key[0]}-{key[1]}")
        if capacity < 0:
            raise TopologyError(f"edge {key[0]}-{key[1]} has negative capacity")
        for name, value in (("fidelity", fidelity), ("trace distance", trace_distance)):
            if value is not None and not 0.0 <= value <= 1.0:
                raise TopologyError(f"edge {key[0]}-{key[1]} {name} {value!r} outside [0, 1]")
        if fidelity is not None and trace_distance is None:
            trace_distance = coupled_trace_distance(fidelity)
        record = EdgeRecord(key[0], key[1], capacity, capacity, fidelity, trace_distance)
        self.edges[key] = record
        self.topology.add_edge(*key)
        self._invalidate_closeness()
        return record

    def _invalidate_closeness(self):
        for record in self.nodes.values():
            if not record.closeness_pinned:
                record.closeness = None

    def edge(self, u: str, v: str) -> EdgeRecord:
        try:
            return self.edges[edge_key(u, v)]
        except KeyError:
            raise TopologyError(f"unknown edge {u}-{v}") from None

    def node(self, node_id: str) -> NodeRecord:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TopologyError(f"unknown node {node_id!r}") from None

    def neighbors(self, node_id: str) -> List[str]:
        return sorted(self.topology.neighbors(node_id))

    @property
    def adjacency(self) -> Dict[str, List[str]]:
        return {node_id: self.neighbors(node_id) for node_id in sorted(self.nodes)}

    def copy(self) -> "NetworkGraph":
        """Private copy: records are duplicated, density matrices shared (immutable)."""
        clone = NetworkGraph()
        clone.nodes = {k: copy.copy(v) for k, v in self.nodes.items()}
        clone.edges = {k: copy.copy(v) for k, v in self.edges.items()}
        clone.topology = self.topology.copy()
        return clone

    def without_edges(self, keys: Iterable[EdgeKey]) -> "NetworkGraph":
        """Copy with the given edges removed; cached closeness values are kept."""
        clone = self.copy()
        for key in keys:
            del clone.edges[key]
            clone.topology.remove_edge(*key)
        return clone

    def compute_closeness(self) -> Dict[str, float]:
        return {node_id: closeness_centrality(self, node_id) for node_id in sorted(self.nodes)}

    def validate_pair(self, pair: SdPair):
        if pair.source == pair.destination:
            raise TopologyError(f"pair {pair} has identical endpoints")
        for endpoint in (pair.source, pair.destination):
            self.node(endpoint)

    def check_invariants(self):
        for record in self.nodes.values():
            assert 0 <= record.memory_free <= record.memory_total, record
        for key, record in self.edges.items():
            assert 0 <= record.capacity_free <= record.capacity_total, record
            assert key == record.key and self.topology.has_edge(*key)
        assert self.topology.number_of_edges() == len(self.edges)


def closeness_centrality(graph: NetworkGraph, node: str) -> float:
    """(n-1) / sum of hop distances, taken over the node's connected component."""
    record = graph.node(node)
    if record.closeness is None:
        # wf_improved=False keeps the component-local normalization
        record.closeness = float(nx.closeness_centrality(graph.topology, u=node, wf_improved=False))
    return record.closeness


def hop_distances(graph: NetworkGraph, node: str) -> Dict[str, int]:
    graph.node(node)
    return dict(nx.single_source_shortest_path_length(graph.topology, node))


# Topology documents

def _parse_int(token: str, what: str, line_no: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise TopologyError(f"{what} {token!r} is not an integer", line_no) from None


def _parse_unit(token: str, what: str, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise TopologyError(f"{what} {token!r} is not a number", line_no) from None
    if not 0.0 <= value <= 1.0:
        raise TopologyError(f"{what} {value!r} outside [0, 1]", line_no)
    return value


def parse_topology(text: str) -> NetworkGraph:
    graph = NetworkGraph()
    pending_edges = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        keyword = tokens[0]
        if keyword == "node":
            if len(tokens) not in (3, 4):
                raise TopologyError("expected 'node <id> <memory_total> [closeness]'", line_no)
            memory = _parse_int(tokens[2], "memory", line_no)
            closeness = _parse_unit(tokens[3], "closeness", line_no) if len(tokens) == 4 else None
            try:
                graph.add_node(tokens[1], memory, closeness)
            except TopologyError as exc:
                raise TopologyError(str(exc), line_no) from None
        elif keyword == "edge":
            if len(tokens) not in (4, 5, 6):
                raise TopologyError("expected 'edge <u> <v> <capacity> [fidelity] [trace_distance]'", line_no)
            capacity = _parse_int(tokens[3], "capacity", line_no)
            fidelity = _parse_unit(tokens[4], "fidelity", line_no) if len(tokens) >= 5 else None
            distance = _parse_unit(tokens[5], "trace distance", line_no) if len(tokens) == 6 else None
            pending_edges.append((line_no, tokens[1], tokens[2], capacity, fidelity, distance))
        else:
            raise TopologyError(f"unknown keyword {keyword!r}", line_no)

    # Edges are attached after all nodes so declarations may come in any order
    for line_no, u, v, capacity, fidelity, distance in pending_edges:
        try:
            graph.add_edge(u, v, capacity, fidelity, distance)
        except TopologyError as exc:
            raise TopologyError(str(exc), line_no) from None
    logger.debug("parsed topology with %d nodes and %d edges", len(graph.nodes), len(graph.edges))
    return graph


def load_topology(source: Union[str, Path]) -> NetworkGraph:
    """Load a topology document from a path; bare names resolve against data/."""
    path = Path(source)
    if not path.exists() and (DATA_DIR / path).exists():
        path = DATA_DIR / path
    with open(path, "r", encoding="utf-8") as f:
        return parse_topology(f.read())


def dump_topology(graph: NetworkGraph) -> str:
    lines = []
    for node_id in sorted(graph.nodes):
        record = graph.nodes[node_id]
        line = f"node {node_id} {record.memory_total}"
        if record.closeness_pinned:
            line += f" {record.closeness:.12g}"
        lines.append(line)
    for key in sorted(graph.edges):
        record = graph.edges[key]
        line = f"edge {key[0]} {key[1]} {record.capacity_total}"
        if record.fidelity is not None:
            line += f" {record.fidelity:.12g} {record.trace_distance:.12g}"
        lines.append(line)
    return "\n".join(lines) + "\n"


# Attribute sampling and generation

def attach_edge_states(graph: NetworkGraph, key: EdgeKey, rho: DensityMatrix, sigma: DensityMatrix):
    record = graph.edges[key]
    record.rho, record.sigma = rho, sigma
    record.fidelity = fidelity_uhlmann(rho, sigma)
    record.trace_distance = trace_distance(rho, sigma)


def sample_edge_attributes(graph: NetworkGraph, mean_fidelity: float, std_dev: float,
                           rng_seed) -> NetworkGraph:
    """Copy of ``graph`` with every unset edge fidelity drawn from N(mean, std).

    Draws happen in sorted edge order so a given seed always yields the same
    graph. ``rng_seed`` is anything numpy.random.default_rng accepts.
    """
    if not 0.0 < mean_fidelity <= 1.0:
        raise ValueError(f"mean fidelity must lie in (0, 1], got {mean_fidelity!r}")
    if std_dev < 0:
        raise ValueError("standard deviation must be non-negative")
    rng = np.random.default_rng(rng_seed)
    sampled = graph.copy()
    for key in sorted(sampled.edges):
        record = sampled.edges[key]
        if record.has_states:
            continue
        if record.fidelity is None:
            draw = mean_fidelity if std_dev == 0 else rng.normal(mean_fidelity, std_dev)
            record.fidelity = float(min(max(draw, MIN_SAMPLED_FIDELITY), 1.0))
            record.trace_distance = None
        if record.trace_distance is None:
            record.trace_distance = coupled_trace_distance(record.fidelity)
    return sampled


def generate_random_graph(n_nodes: int, edge_probability: float, rng_seed: int,
                          memory: int = 20, capacity: int = 10) -> NetworkGraph:
    """Connected G(n, p) graph; resampled until connected."""
    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    if not 0.0 < edge_probability <= 1.0:
        raise ValueError(f"edge probability must lie in (0, 1], got {edge_probability!r}")
    rng = np.random.default_rng(rng_seed)
    width = len(str(n_nodes - 1))
    for attempt in range(MAX_CONNECT_RETRIES):
        candidate = nx.gnp_random_graph(n_nodes, edge_probability, seed=int(rng.integers(2 ** 31)))
        if nx.is_connected(candidate):
            break
    else:
        raise TopologyError(f"no connected graph after {MAX_CONNECT_RETRIES} attempts")
    logger.debug("connected graph after %d attempts", attempt + 1)

    graph = NetworkGraph()
    names = {i: f"v{i:0{width}d}" for i in candidate.nodes}
    for i in sorted(candidate.nodes):
        graph.add_node(names[i], memory)
    for a, b in sorted(candidate.edges):
        graph.add_edge(names[a], names[b], capacity)
    return graph


# Constraint validation

CAPACITY_POSITIVE = "13b"
MEMORY = "13c"
FLOW_SOURCE = "13d"
FLOW_DESTINATION = "13e"
FLOW_INTERMEDIATE = "13f"
CAPACITY_LIMIT = "13g"
PURIFICATION_MONOTONE = "13h"


@dataclass(frozen=True)
class Violation:
    label: str
    entity: str
    detail: str

    def render(self) -> str:
        return f"CONSTRAINT {self.label} AT {self.entity}: {self.detail}"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, label: str, entity: str, detail: str):
        self.violations.append(Violation(label, entity, detail))

    def count(self, label: str) -> int:
        return sum(1 for v in self.violations if v.label == label)

    def render(self) -> str:
        return "".join(v.render() + "\n" for v in self.violations)


def validate_flow_constraints(graph: NetworkGraph, outcomes: Iterable["RoutingOutcome"]) -> ValidationReport:
    """Check routed outcomes against capacity, memory, flow and purification constraints.

    Only successful outcomes consume resources. Unknown nodes or edges raise
    TopologyError; every other problem is a report entry.
    """
    report = ValidationReport()
    edge_usage: Counter = Counter()
    node_usage: Counter = Counter()

    for outcome in outcomes:
        decision = outcome.decision
        if decision is not None and decision.triggered:
            graph.edge(*decision.edge)
            if decision.f_purified < decision.f_edge_before - 1e-9:
                report.add(PURIFICATION_MONOTONE, _edge_name(decision.edge),
                           f"purified fidelity {decision.f_purified:.6g} below "
                           f"pre-purification {decision.f_edge_before:.6g}")
        if not outcome.success or outcome.path is None:
            continue

        nodes = list(outcome.path.nodes)
        for node_id in nodes:
            graph.node(node_id)
        pair = outcome.pair
        if nodes[0] != pair.source:
            report.add(FLOW_SOURCE, f"node {pair.source}", f"path for {pair} starts at {nodes[0]}")
        if nodes[-1] != pair.destination:
            report.add(FLOW_DESTINATION, f"node {pair.destination}", f"path for {pair} ends at {nodes[-1]}")
        visits = Counter(nodes)
        for node_id, count in sorted(visits.items()):
            if count > 1:
                report.add(FLOW_INTERMEDIATE, f"node {node_id}",
                           f"path for {pair} enters and leaves {count} times")
        for u, v in zip(nodes, nodes[1:]):
            graph.edge(u, v)
            edge_usage[edge_key(u, v)] += 1
        for node_id in nodes:
            node_usage[node_id] += 1

    for key in sorted(edge_usage):
        record = graph.edges[key]
        if record.capacity_total < 1:
            report.add(CAPACITY_POSITIVE, _edge_name(key), f"capacity {record.capacity_total} on a used edge")
        if edge_usage[key] > record.capacity_total:
            report.add(CAPACITY_LIMIT, _edge_name(key),
                       f"usage {edge_usage[key]} exceeds capacity {record.capacity_total}")
    for node_id in sorted(node_usage):
        record = graph.nodes[node_id]
        if record.memory_total < 1 or node_usage[node_id] > record.memory_total:
            report.add(MEMORY, f"node {node_id}",
                       f"usage {node_usage[node_id]} exceeds memory {record.memory_total}")
    return report


def _edge_name(key: EdgeKey) -> str:
    return f"edge {key[0]}-{key[1]}"
