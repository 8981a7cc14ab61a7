#!/usr/bin/env python3
"""
Slot-clocked Monte-Carlo experiment engine: builds per-trial networks, runs the
routers and aggregates throughput and fidelity into per-capacity metrics.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from enum import Enum
from functools import lru_cache
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from network_model import NetworkGraph, SdPair, TopologyError, load_topology, sample_edge_attributes
from quantum_core import make_state, purity
from tdpp_routing import (BaselineKind, FailureReason, RoutingOutcome, baseline_route, tdpp_route)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["capacity", "algorithm", "mean_fidelity", "stderr_fidelity",
               "mean_throughput", "stderr_throughput", "success_rate", "trials"]

# Stream tags mixed into the trial seed
_SAMPLING_STREAM = 0
_LINK_STREAM = 1


class ConfigError(ValueError):
    """Unknown or malformed configuration key."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class Algorithm(Enum):
    TDPP = "tdpp"
    HOP_BASELINE = "hop_baseline"
    GREEDY_BASELINE = "greedy_baseline"


def _parse_pair(token: str, key: str = "pairs") -> SdPair:
    source, sep, destination = token.strip().partition(":")
    if not sep or not source or not destination:
        raise ConfigError(key, f"pair {token!r} is not of the form S:D")
    if source == destination:
        raise ConfigError(key, f"pair {token!r} has identical endpoints")
    return SdPair(source, destination)


def _parse_int_list(key: str, text: str) -> Tuple[int, ...]:
    """Comma-separated integers; a token may be an inclusive range start..stop[:step]."""
    values = []
    for token in text.split(","):
        token = token.strip()
        try:
            if ".." in token:
                span, _, step = token.partition(":")
                start, stop = span.split("..")
                values.extend(range(int(start), int(stop) + 1, int(step or 1)))
            else:
                values.append(int(token))
        except ValueError:
            raise ConfigError(key, f"malformed integer list {text!r}") from None
    return tuple(values)


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Experiment parameters; defaults describe the standard US backbone sweep."""
    topology: str = "us_backbone.topo"
    pairs: Union[int, Tuple[SdPair, ...]] = 10
    algorithms: Tuple[Algorithm, ...] = (Algorithm.TDPP,)
    trials: int = 1000
    rng_seed: int = 0
    alpha: float = 0.5
    beta: float = 0.5
    capacity_range: Tuple[int, ...] = tuple(range(10, 91, 10))
    memory_per_node: int = 20
    mean_fidelity: float = 0.8
    fidelity_std: float = 0.1
    fidelity_threshold: float = 0.8
    k_paths: int = 3
    slot_ms: int = 500
    lifetime_ms: int = 1460
    link_success_prob: float = 0.02
    amplitude_scaling: bool = True
    threads: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials", "must be at least 1")
        if not self.capacity_range:
            raise ConfigError("capacity_range", "must name at least one capacity")
        if any(c < 1 for c in self.capacity_range):
            raise ConfigError("capacity_range", "capacities must be at least 1")
        if self.alpha == 0 and self.beta == 0:
            raise ConfigError("alpha", "alpha and beta cannot both be zero")
        if not 0.0 < self.fidelity_threshold <= 1.0:
            raise ConfigError("fidelity_threshold", "must lie in (0, 1]")
        if not 0.0 < self.mean_fidelity <= 1.0:
            raise ConfigError("mean_fidelity", "must lie in (0, 1]")
        if self.fidelity_std < 0:
            raise ConfigError("fidelity_std", "must be non-negative")
        if not 0.0 <= self.link_success_prob <= 1.0:
            raise ConfigError("link_success_prob", "must lie in [0, 1]")
        if self.k_paths < 1:
            raise ConfigError("k_paths", "must be at least 1")
        if self.memory_per_node < 0:
            raise ConfigError("memory_per_node", "must be non-negative")
        if self.slot_ms <= 0 or self.lifetime_ms <= 0:
            raise ConfigError("slot_ms", "slot and lifetime must be positive")
        if self.threads < 0:
            raise ConfigError("threads", "must be non-negative")
        if isinstance(self.pairs, int) and self.pairs < 1:
            raise ConfigError("pairs", "must request at least one pair")
        if not self.algorithms:
            raise ConfigError("algorithms", "must name at least one algorithm")

    @property
    def amplitude_factor(self) -> float:
        """max(|a|^2, |b|^2) of the normalized a|0> + b|1> state, or 1 when disabled."""
        if not self.amplitude_scaling:
            return 1.0
        amplitudes = np.abs(make_state(self.alpha, self.beta).amplitudes) ** 2
        return float(amplitudes.max())

    @property
    def effective_threshold(self) -> float:
        return self.fidelity_threshold * self.amplitude_factor

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object], base: Optional["ExperimentConfig"] = None
                     ) -> "ExperimentConfig":
        """Build a config from string (or typed) values, starting from ``base``."""
        known = {f.name for f in fields(cls)}
        updates = {}
        for key, value in mapping.items():
            name = _ALIASES.get(key, key)
            if name not in known:
                raise ConfigError(key, "unknown configuration key")
            updates[name] = _convert(name, value) if isinstance(value, str) else value
        return replace(base or cls(), **updates)


_ALIASES = {"algorithm": "algorithms", "seed": "rng_seed", "capacity": "capacity_range",
            "k": "k_paths", "threshold": "fidelity_threshold"}


def _convert(name: str, text: str):
    text = text.strip()
    try:
        if name == "pairs":
            if ":" in text:
                return tuple(_parse_pair(token) for token in text.split(","))
            return int(text)
        if name == "algorithms":
            return tuple(Algorithm(token.strip()) for token in text.split(","))
        if name == "capacity_range":
            return _parse_int_list(name, text)
        if name == "amplitude_scaling":
            return _parse_bool(name, text)
        if name == "topology":
            return text
        if name in ("trials", "rng_seed", "memory_per_node", "k_paths", "slot_ms", "lifetime_ms", "threads"):
            return int(text)
        return float(text)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r}") from None


def parse_config(text: str) -> Dict[str, str]:
    """Flat ``key = value`` document; '#' starts a comment."""
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {line_no}", f"expected 'key = value', got {raw.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, object]] = None) -> ExperimentConfig:
    """Defaults, then the document at ``path``, then ``overrides``."""
    config = ExperimentConfig()
    if path is not None:
        config = ExperimentConfig.from_mapping(parse_config(Path(path).read_text(encoding="utf-8")))
    if overrides:
        config = ExperimentConfig.from_mapping(overrides, base=config)
    return config


@dataclass(frozen=True)
class MetricsRecord:
    capacity: int
    algorithm: Algorithm
    mean_e2e_fidelity: float
    mean_throughput: float
    success_rate: float
    trials: int
    stderr_fidelity: float = 0.0
    stderr_throughput: float = 0.0


@dataclass
class TrialSetup:
    graph: NetworkGraph
    pairs: List[SdPair]
    threshold: float


@lru_cache(maxsize=8)
def _base_topology(topology: str) -> NetworkGraph:
    return load_topology(topology)


def trial_seed(config: ExperimentConfig, trial_index: int, stream: int) -> np.random.SeedSequence:
    """Trial randomness is shared across capacities so sweep points are coupled."""
    return np.random.SeedSequence([config.rng_seed, trial_index, stream])


def generate_links(graph: NetworkGraph, capacity: int, success_prob: float, seed: np.random.SeedSequence):
    """Set every edge's capacity to the number of its ``capacity`` channels that produced a pair.

    Channel j of an edge sees the same uniform draw at every capacity > j.
    """
    children = seed.spawn(len(graph.edges))
    for child, key in zip(children, sorted(graph.edges)):
        if success_prob >= 1.0:
            generated = capacity
        else:
            draws = np.random.default_rng(child).random(capacity)
            generated = int(np.count_nonzero(draws < success_prob))
        record = graph.edges[key]
        record.capacity_total = record.capacity_free = generated


def sample_pairs(graph: NetworkGraph, count: int, rng: np.random.Generator) -> List[SdPair]:
    candidates = list(combinations(sorted(graph.nodes), 2))
    if count > len(candidates):
        raise ConfigError("pairs", f"{count} pairs requested but the topology has {len(candidates)}")
    chosen = rng.choice(len(candidates), size=count, replace=False)
    return [SdPair(*candidates[i]) for i in chosen]


def build_trial(config: ExperimentConfig, capacity: int, trial_index: int) -> TrialSetup:
    """Fresh graph for one slot: generated links, sampled fidelities, S-D pairs."""
    graph = _base_topology(config.topology).copy()
    for record in graph.nodes.values():
        record.memory_total = record.memory_free = config.memory_per_node
    generate_links(graph, capacity, config.link_success_prob,
                   trial_seed(config, trial_index, _LINK_STREAM))

    rng = np.random.default_rng(trial_seed(config, trial_index, _SAMPLING_STREAM))
    graph = sample_edge_attributes(graph, config.mean_fidelity, config.fidelity_std, rng)
    if isinstance(config.pairs, int):
        pairs = sample_pairs(graph, config.pairs, rng)
    else:
        pairs = list(config.pairs)
        for pair in pairs:
            try:
                graph.validate_pair(pair)
            except TopologyError as exc:
                raise ConfigError("pairs", str(exc)) from None
    return TrialSetup(graph, pairs, config.effective_threshold)


def route_trial(config: ExperimentConfig, setup: TrialSetup, algorithm: Algorithm) -> List[RoutingOutcome]:
    graph = setup.graph.copy()
    if algorithm is Algorithm.TDPP:
        outcomes = tdpp_route(graph, setup.pairs, config.k_paths, setup.threshold)
    elif algorithm is Algorithm.HOP_BASELINE:
        outcomes = baseline_route(graph, setup.pairs, BaselineKind.HOP_SHORTEST_NO_PURIFICATION)
    else:
        outcomes = baseline_route(graph, setup.pairs, BaselineKind.GREEDY_MAX_FIDELITY)
    return qubit_lifetime_filter(outcomes, config.slot_ms, config.lifetime_ms)


def run_trial(config: ExperimentConfig, capacity: int, trial_index: int,
              algorithm: Optional[Algorithm] = None) -> List[RoutingOutcome]:
    """Outcomes of one slot; identical for equal (seed, capacity, trial_index)."""
    setup = build_trial(config, capacity, trial_index)
    return route_trial(config, setup, algorithm or config.algorithms[0])


def qubit_lifetime_filter(outcomes: Iterable[RoutingOutcome], slot_ms: int,
                          lifetime_ms: int) -> List[RoutingOutcome]:
    """Fail outcomes needing more sequential slots than a stored qubit survives."""
    if slot_ms <= 0 or lifetime_ms <= 0:
        raise ValueError("slot and lifetime must be positive")
    budget = lifetime_ms // slot_ms
    filtered = []
    for outcome in outcomes:
        if outcome.success and outcome.slots_required > budget:
            logger.debug("pair %d needs %d slots, budget %d", outcome.pair_index,
                         outcome.slots_required, budget)
            outcome = replace(outcome, success=False,
                              failure_reason=FailureReason.FIDELITY_BELOW_THRESHOLD)
        filtered.append(outcome)
    return filtered


def _trial_rows(config: ExperimentConfig, capacity: int, trial_index: int) -> List[dict]:
    setup = build_trial(config, capacity, trial_index)
    rows = []
    for algorithm in config.algorithms:
        outcomes = route_trial(config, setup, algorithm)
        fidelities = [o.e2e_fidelity for o in outcomes if o.success]
        rows.append({
            "capacity": capacity,
            "algorithm": algorithm.value,
            "trial": trial_index,
            "pairs": len(outcomes),
            "successes": len(fidelities),
            "fidelity_sum": float(np.sum(fidelities)) if fidelities else 0.0,
            "fidelity_sq_sum": float(np.sum(np.square(fidelities))) if fidelities else 0.0,
        })
    return rows


def _stderr(values: pd.Series) -> float:
    values = values.dropna()
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(len(values)))


def _outcome_stderr(group: pd.DataFrame) -> float:
    """Standard error of the mean fidelity over every successful outcome in the group."""
    count = int(group["successes"].sum())
    if len(group) < 2 or count < 2:
        return 0.0
    total = float(group["fidelity_sum"].sum())
    variance = (float(group["fidelity_sq_sum"].sum()) - total * total / count) / (count - 1)
    return float(np.sqrt(max(variance, 0.0) / count))


def aggregate(trial_frame: pd.DataFrame, order: Sequence[Algorithm]) -> List[MetricsRecord]:
    records = []
    grouped = trial_frame.groupby(["capacity", "algorithm"], sort=False)
    for capacity in sorted(trial_frame["capacity"].unique()):
        for algorithm in order:
            group = grouped.get_group((capacity, algorithm.value))
            successes = int(group["successes"].sum())
            requested = int(group["pairs"].sum())
            records.append(MetricsRecord(
                capacity=int(capacity),
                algorithm=algorithm,
                mean_e2e_fidelity=float(group["fidelity_sum"].sum() / successes) if successes else 0.0,
                mean_throughput=float(group["successes"].mean()),
                success_rate=successes / requested if requested else 0.0,
                trials=len(group),
                stderr_fidelity=_outcome_stderr(group),
                stderr_throughput=_stderr(group["successes"].astype(float)),
            ))
    return records


def run_experiment(config: ExperimentConfig, threads: Optional[int] = None) -> List[MetricsRecord]:
    """One MetricsRecord per (capacity, algorithm), capacities ascending."""
    workers = threads if threads is not None else config.threads
    workers = workers or os.cpu_count() or 1
    state = make_state(config.alpha, config.beta)
    logger.info("experiment on %s: %d trials x %d capacities, state purity %.3f, threshold %.4g",
                config.topology, config.trials, len(config.capacity_range),
                purity(state.density()), config.effective_threshold)

    tasks = [(capacity, trial) for capacity in config.capacity_range for trial in range(config.trials)]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {task: executor.submit(_trial_rows, config, *task) for task in tasks}
        results = {task: future.result() for task, future in futures.items()}

    rows = [row for task in tasks for row in results[task]]
    records = aggregate(pd.DataFrame(rows), config.algorithms)
    for record in records:
        logger.info("capacity %d %s: fidelity %.4f throughput %.3f", record.capacity,
                    record.algorithm.value, record.mean_e2e_fidelity, record.mean_throughput)
    return records


def metrics_frame(records: Iterable[MetricsRecord]) -> pd.DataFrame:
    return pd.DataFrame([{
        "capacity": r.capacity,
        "algorithm": r.algorithm.value,
        "mean_fidelity": r.mean_e2e_fidelity,
        "stderr_fidelity": r.stderr_fidelity,
        "mean_throughput": r.mean_throughput,
        "stderr_throughput": r.stderr_throughput,
        "success_rate": r.success_rate,
        "trials": r.trials,
    } for r in records], columns=CSV_COLUMNS)


def write_metrics_csv(records: Iterable[MetricsRecord], stream: TextIO):
    metrics_frame(records).to_csv(stream, index=False, float_format="%.6g", lineterminator="\n")


def read_metrics_csv(stream: Union[TextIO, str, Path]) -> List[MetricsRecord]:
    frame = pd.read_csv(stream)
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"metrics CSV lacks columns {missing}")
    return [MetricsRecord(
        capacity=int(row.capacity),
        algorithm=Algorithm(row.algorithm),
        mean_e2e_fidelity=float(row.mean_fidelity),
        mean_throughput=float(row.mean_throughput),
        success_rate=float(row.success_rate),
        trials=int(row.trials),
        stderr_fidelity=float(row.stderr_fidelity),
        stderr_throughput=float(row.stderr_throughput),
    ) for row in frame.itertuples(index=False)]
