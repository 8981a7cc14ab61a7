#!/usr/bin/env python3
"""
Entanglement routing pipeline: walkthrough regressions, decision-log
validation, capacity sweep and report, each stage through cli_runner.py.
"""
import subprocess
import sys

from cli_runner import EXIT_INPUT, EXIT_OK, EXIT_ROUTING, EXIT_VALIDATION

PYTHON = sys.executable

STAGE_FAILURES = {
    EXIT_INPUT: "unreadable topology, config or decision log",
    EXIT_ROUTING: "routing failure or deviation from reference values",
    EXIT_VALIDATION: "decision log violates flow constraints",
}


def run_command(command, description):
    """Run one pipeline stage as a subprocess; False when the stage exits non-zero."""
    print(f"\n{'='*50}")
    print(f"STAGE: {description}")
    print(f"{'='*50}")

    result = subprocess.run(command, capture_output=True, text=True)
    print(result.stdout)
    if result.returncode == EXIT_OK:
        if result.stderr:
            print("log:", result.stderr)
        return True
    meaning = STAGE_FAILURES.get(result.returncode, "unexpected exit status")
    print(f"stage failed ({result.returncode}: {meaning})")
    if result.stderr:
        print(result.stderr)
    return False


def main(trials=None):
    print("ENTANGLEMENT ROUTING - COMPLETE ANALYSIS")

    if not run_command([PYTHON, "cli_runner.py", "demo-pump"], "Entanglement pumping regression"):
        print("Pumping trajectory deviates from the reference values.")
        return 1

    if not run_command([PYTHON, "cli_runner.py", "demo-fig3"], "Five-node walkthrough regression"):
        print("Walkthrough values deviate from the reference values.")
        return 1

    if not run_command([PYTHON, "cli_runner.py", "route", "fig3.topo", "--pair", "s:d",
                        "--threshold", "0.5", "--out", "fig3_decisions.log"],
                       "Routing the walkthrough pair"):
        return 1

    if not run_command([PYTHON, "cli_runner.py", "validate", "fig3.topo", "fig3_decisions.log"],
                       "Validating the decision log"):
        return 1

    experiment = [PYTHON, "cli_runner.py", "experiment", "--config", "data/experiment.conf",
                  "--out", "metrics.csv"]
    if trials:
        experiment += ["--trials", str(trials)]
    if not run_command(experiment, "Capacity sweep on the US backbone"):
        print("Experiment failed.")
        return 1

    if not run_command([PYTHON, "generate_report.py", "metrics.csv"], "Generating report"):
        print("Report generation failed.")
        return 1

    print("\n" + "="*60)
    print("ANALYSIS COMPLETE!")
    print("="*60)
    print("Generated files:")
    print("- fig3_decisions.log (walkthrough decision log)")
    print("- metrics.csv (capacity sweep)")
    print("- routing_report.json (complete analysis)")
    print("- routing_report.png (curves)")
    print("- routing_report.md (readable report)")
    return 0


if __name__ == "__main__":
    sys.exit(main(int(sys.argv[1]) if len(sys.argv) > 1 else None))
