#!/usr/bin/env python3
"""
Command-line entry point: single-shot routing, capacity sweeps, log
validation and the two worked-example demos.

Exit codes: 0 success, 1 input error, 2 routing failure, 3 validation failure.
"""
import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from network_model import DATA_DIR, SdPair, load_topology, sample_edge_attributes, validate_flow_constraints
from quantum_core import pump_until_threshold
from sim_engine import (Algorithm, TrialSetup, load_config, route_trial, run_experiment,
                        write_metrics_csv)
from tdpp_routing import (CostModel, fidelity_floor_holds, format_decision_log, node_costs,
                          parse_decision_log, path_maxima, purification_trigger, tdpp_route,
                          yen_k_shortest_paths)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ROUTING = 2
EXIT_VALIDATION = 3

GOLDEN_TOLERANCE = 0.01
PUMP_REFERENCE = (0.731, 0.793, 0.809)
PUMP_DEFAULTS = (0.528, 0.548, 0.80)
FIG3_PAIR = SdPair("s", "d")
FIG3_PATH = ("s", "r2", "r3", "d")
FIG3_D_MAX = 0.67
FIG3_F_SEL = 0.86
FIG3_PURIFIED = 0.92


class UsageError(ValueError):
    """Rejected command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _output(path):
    if path is None or path == "-":
        return nullcontext(sys.stdout)
    return open(path, "w", encoding="utf-8", newline="")


def _parse_pair(text: str) -> SdPair:
    source, sep, destination = text.partition(":")
    if not sep or not source or not destination:
        raise UsageError(f"pair {text!r} is not of the form S:D")
    return SdPair(source, destination)


def _flag_overrides(args) -> dict:
    """Config overrides from the explicit flags, then --set KEY=VALUE entries."""
    overrides = {}
    for flag, key in (("seed", "rng_seed"), ("trials", "trials"), ("capacity", "capacity_range"),
                      ("algorithm", "algorithms"), ("alpha", "alpha"), ("beta", "beta"),
                      ("threshold", "fidelity_threshold"), ("k", "k_paths"), ("threads", "threads")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    for entry in getattr(args, "set", None) or []:
        key, sep, value = entry.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {entry!r}")
        overrides[key.strip()] = value
    return overrides


def cmd_route(args) -> int:
    config = load_config(args.config, _flag_overrides(args))
    if not args.pair:
        raise UsageError("route needs at least one --pair S:D")
    graph = load_topology(args.topology)
    graph = sample_edge_attributes(graph, config.mean_fidelity, config.fidelity_std, config.rng_seed)
    pairs = [_parse_pair(text) for text in args.pair]
    algorithm = config.algorithms[0]

    outcomes = route_trial(config, TrialSetup(graph, pairs, config.fidelity_threshold), algorithm)
    with _output(args.out) as stream:
        stream.write(format_decision_log(outcomes))
    failed = [o for o in outcomes if not o.success]
    if failed:
        logger.info("%d of %d pairs failed", len(failed), len(outcomes))
        return EXIT_ROUTING
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = load_config(args.config, _flag_overrides(args))
    records = run_experiment(config)
    with _output(args.out) as stream:
        write_metrics_csv(records, stream)
    return EXIT_OK


def cmd_validate(args) -> int:
    graph = load_topology(args.topology)
    text = Path(args.log).read_text(encoding="utf-8")
    report = validate_flow_constraints(graph, parse_decision_log(text, graph))
    with _output(args.out) as stream:
        stream.write(report.render())
        if report.ok:
            stream.write("no constraint violations\n")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def _check(label: str, value: float, reference: float, exact: bool = False) -> bool:
    tolerance = 1e-12 if exact else GOLDEN_TOLERANCE
    ok = abs(value - reference) <= tolerance
    print(f"  {label:<22} {value:.4f}   reference {reference:.4f}   {'ok' if ok else 'DEVIATION'}")
    return ok


def cmd_demo_fig3(args) -> int:
    graph = load_topology(DATA_DIR / "fig3.topo")
    costs = node_costs(graph)

    print("Closeness centrality and node cost")
    for node_id, closeness in graph.compute_closeness().items():
        print(f"  {node_id:<4} C={closeness:.2f}  cost={costs[node_id]:.4f}")

    print("\nCandidate paths (centrality cost)")
    candidates = yen_k_shortest_paths(graph, FIG3_PAIR, 2, CostModel.CENTRALITY_COST, costs)
    for rank, path in enumerate(candidates, start=1):
        print(f"  {rank}. {path}  cost={path.cost:.4f}")

    chosen = candidates[0]
    print(f"\nEdges on {chosen}")
    for (u, v), (f, d) in zip(chosen.edges, chosen.edge_metrics):
        print(f"  {u}-{v:<4} F={f:.2f} D={d:.2f}  purify={int(purification_trigger(f, d))}"
              f"  floor={int(fidelity_floor_holds(f, d))}")

    outcome = tdpp_route(graph.copy(), [FIG3_PAIR], k=2, fidelity_threshold=0.5)[0]
    d_max, f_sel_edge = path_maxima(chosen)
    print("\nWorked values")
    results = [
        outcome.path is not None and outcome.path.nodes == FIG3_PATH,
        _check("d_max", d_max, FIG3_D_MAX, exact=True),
        _check("f_sel_edge", f_sel_edge, FIG3_F_SEL, exact=True),
    ]
    if outcome.decision is not None:
        results.append(_check("purified fidelity", outcome.decision.f_purified, FIG3_PURIFIED))
        print(f"  purified edge          {'-'.join(outcome.decision.edge)}")
    else:
        results.append(False)
    print(f"  selected path          {outcome.path}")
    print(f"  end-to-end fidelity    {outcome.e2e_fidelity:.4f}")
    return EXIT_OK if all(results) else EXIT_ROUTING


def cmd_demo_pump(args) -> int:
    result = pump_until_threshold(args.a, args.b, args.threshold, args.max_rounds)
    golden = (args.a, args.b, args.threshold) == PUMP_DEFAULTS
    print(f"Pumping F={args.a} against base pair F={args.b} to {args.threshold}")
    deviations = 0
    for round_no, value in enumerate(result.trajectory, start=1):
        line = f"  round {round_no}: {value:.4f}"
        if golden and round_no <= len(PUMP_REFERENCE):
            reference = PUMP_REFERENCE[round_no - 1]
            flag = "ok" if abs(value - reference) <= GOLDEN_TOLERANCE else "DEVIATION"
            deviations += flag != "ok"
            line += f"   reference {reference:.3f}   {flag}"
        print(line)
    if result.converged:
        print(f"Reached {result.final_fidelity:.4f} after {result.rounds} rounds")
    else:
        print(f"Did not converge: {result.final_fidelity:.4f} after {result.rounds} rounds")
    return EXIT_ROUTING if deviations else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = _Parser(prog="cli_runner", description="Quantum network entanglement routing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    route = sub.add_parser("route", parents=[common], help="route S-D pairs on one topology")
    route.add_argument("topology")
    route.add_argument("--pair", action="append", help="S:D, repeatable")
    route.set_defaults(handler=cmd_route)

    experiment = sub.add_parser("experiment", parents=[common], help="run a capacity sweep")
    experiment.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    experiment.set_defaults(handler=cmd_experiment)

    for command in (route, experiment):
        command.add_argument("--config")
        command.add_argument("--out")
        command.add_argument("--seed", type=int)
        command.add_argument("--trials", type=int)
        command.add_argument("--capacity", help="comma list or start..stop:step")
        command.add_argument("--algorithm", choices=[a.value for a in Algorithm])
        command.add_argument("--alpha", type=float)
        command.add_argument("--beta", type=float)
        command.add_argument("--threshold", type=float)
        command.add_argument("--k", type=int)
        command.add_argument("--threads", type=int)

    validate = sub.add_parser("validate", parents=[common], help="check a decision log against a topology")
    validate.add_argument("topology")
    validate.add_argument("log")
    validate.add_argument("--out")
    validate.set_defaults(handler=cmd_validate)

    fig3 = sub.add_parser("demo-fig3", parents=[common], help="five-node walkthrough")
    fig3.set_defaults(handler=cmd_demo_fig3)

    pump = sub.add_parser("demo-pump", parents=[common], help="entanglement pumping trajectory")
    pump.add_argument("--a", type=float, default=PUMP_DEFAULTS[0])
    pump.add_argument("--b", type=float, default=PUMP_DEFAULTS[1])
    pump.add_argument("--threshold", type=float, default=PUMP_DEFAULTS[2])
    pump.add_argument("--max-rounds", type=int, default=10)
    pump.set_defaults(handler=cmd_demo_pump)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s [%(levelname)s] [%(name)s] %(message)s")
    try:
        return args.handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
