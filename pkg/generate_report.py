#!/usr/bin/env python3
"""
Generate the capacity-sweep report from a metrics CSV
"""
import argparse
import json
from datetime import datetime

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd
from scipy.stats import spearmanr

from sim_engine import Algorithm, metrics_frame, read_metrics_csv

# Gaps wider than this many standard errors are reported as clear
GAP_STDERRS = 3


def analyze_metrics(frame: pd.DataFrame) -> dict:
    """Per-algorithm summary plus the TDPP-versus-baseline fidelity gaps."""
    analysis = {"algorithms": {}, "fidelity_gaps": []}
    for algorithm, group in frame.groupby("algorithm", sort=False):
        group = group.sort_values("capacity")
        trend = None
        if group["capacity"].nunique() > 1 and group["mean_throughput"].nunique() > 1:
            trend = float(spearmanr(group["capacity"], group["mean_throughput"]).correlation)
        analysis["algorithms"][algorithm] = {
            "capacities": group["capacity"].tolist(),
            "peak_throughput": float(group["mean_throughput"].max()),
            "mean_fidelity": float(group["mean_fidelity"].mean()),
            "throughput_trend": trend,
        }

    tdpp = frame[frame["algorithm"] == Algorithm.TDPP.value].set_index("capacity")
    for algorithm in frame["algorithm"].unique():
        if algorithm == Algorithm.TDPP.value:
            continue
        other = frame[frame["algorithm"] == algorithm].set_index("capacity")
        for capacity in tdpp.index.intersection(other.index):
            gap = tdpp.at[capacity, "mean_fidelity"] - other.at[capacity, "mean_fidelity"]
            stderr = (tdpp.at[capacity, "stderr_fidelity"] ** 2 + other.at[capacity, "stderr_fidelity"] ** 2) ** 0.5
            analysis["fidelity_gaps"].append({
                "capacity": int(capacity),
                "baseline": algorithm,
                "gap": float(gap),
                "stderr": float(stderr),
                "clear": bool(gap > GAP_STDERRS * stderr),
            })
    return analysis


def plot_metrics(frame: pd.DataFrame, path: str):
    plt.figure(figsize=(12, 8))

    plt.subplot(2, 1, 1)
    for algorithm, group in frame.groupby("algorithm", sort=False):
        group = group.sort_values("capacity")
        plt.errorbar(group["capacity"], group["mean_fidelity"], yerr=group["stderr_fidelity"],
                     marker="o", capsize=3, label=algorithm)
    plt.xlabel("Channel capacity (qubits)")
    plt.ylabel("Mean E2E fidelity")
    plt.title("End-to-end fidelity vs channel capacity")
    plt.legend()
    plt.grid(True, alpha=0.3)

    plt.subplot(2, 1, 2)
    for algorithm, group in frame.groupby("algorithm", sort=False):
        group = group.sort_values("capacity")
        plt.errorbar(group["capacity"], group["mean_throughput"], yerr=group["stderr_throughput"],
                     marker="s", capsize=3, label=algorithm)
    plt.xlabel("Channel capacity (qubits)")
    plt.ylabel("Throughput (pairs/slot)")
    plt.title("Throughput vs channel capacity")
    plt.legend()
    plt.grid(True, alpha=0.3)

    plt.tight_layout()
    plt.savefig(path, dpi=150, bbox_inches="tight")
    plt.close()


def generate_markdown_report(report: dict, path: str):
    md_content = f"""# {report['title']}

**Generated:** {report['date']}
**Source:** `{report['source']}`

## Algorithms

| Algorithm | Peak throughput | Mean fidelity | Throughput trend (Spearman) |
|---|---|---|---|
"""
    for algorithm, summary in report["analysis"]["algorithms"].items():
        trend = "n/a" if summary["throughput_trend"] is None else f"{summary['throughput_trend']:.3f}"
        md_content += (f"| {algorithm} | {summary['peak_throughput']:.3f} | "
                       f"{summary['mean_fidelity']:.4f} | {trend} |\n")

    gaps = report["analysis"]["fidelity_gaps"]
    if gaps:
        md_content += "\n## TDPP fidelity gap\n\n| Capacity | Baseline | Gap | Stderr | Clear |\n|---|---|---|---|---|\n"
        for gap in gaps:
            md_content += (f"| {gap['capacity']} | {gap['baseline']} | {gap['gap']:.4f} | "
                           f"{gap['stderr']:.4f} | {'yes' if gap['clear'] else 'no'} |\n")

    md_content += f"""
## Files Generated
- `{report['figure']}` - fidelity and throughput curves
- `{report['json']}` - complete analysis data
"""
    with open(path, "w") as f:
        f.write(md_content)


def generate_report(metrics_path: str, prefix: str = "routing_report") -> dict:
    frame = metrics_frame(read_metrics_csv(metrics_path))
    report = {
        "title": "Entanglement Routing Capacity Sweep",
        "date": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        "source": metrics_path,
        "figure": f"{prefix}.png",
        "json": f"{prefix}.json",
        "analysis": analyze_metrics(frame),
    }
    plot_metrics(frame, report["figure"])
    with open(report["json"], "w") as f:
        json.dump(report, f, indent=2)
    generate_markdown_report(report, f"{prefix}.md")

    print("Routing report generated:")
    print(f"- {report['json']} (detailed data)")
    print(f"- {report['figure']} (curves)")
    print(f"- {prefix}.md (readable format)")
    return report


def main():
    parser = argparse.ArgumentParser(description="Summarize a metrics CSV")
    parser.add_argument("metrics", nargs="?", default="metrics.csv")
    parser.add_argument("--prefix", default="routing_report")
    args = parser.parse_args()
    generate_report(args.metrics, args.prefix)


if __name__ == "__main__":
    main()
