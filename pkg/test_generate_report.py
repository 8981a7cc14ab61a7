import json

import pytest

from generate_report import analyze_metrics, generate_report
from sim_engine import Algorithm, MetricsRecord, metrics_frame, write_metrics_csv


def sweep():
    records = []
    for capacity, throughput in ((10, 0.5), (20, 1.0), (30, 1.8)):
        records.append(MetricsRecord(capacity, Algorithm.TDPP, 0.86, throughput, 0.1, 50, 0.005, 0.1))
        records.append(MetricsRecord(capacity, Algorithm.HOP_BASELINE, 0.70, throughput * 1.5, 0.2, 50, 0.01, 0.1))
    return records


def test_analyze_metrics():
    analysis = analyze_metrics(metrics_frame(sweep()))
    tdpp = analysis["algorithms"]["tdpp"]
    assert tdpp["capacities"] == [10, 20, 30]
    assert tdpp["peak_throughput"] == pytest.approx(1.8)
    assert tdpp["throughput_trend"] == pytest.approx(1.0)
    gaps = analysis["fidelity_gaps"]
    assert [g["capacity"] for g in gaps] == [10, 20, 30]
    assert all(g["baseline"] == "hop_baseline" and g["clear"] for g in gaps)
    assert gaps[0]["gap"] == pytest.approx(0.16)


def test_flat_throughput_has_no_trend():
    records = [MetricsRecord(c, Algorithm.TDPP, 0.9, 0.0, 0.0, 5) for c in (10, 20)]
    assert analyze_metrics(metrics_frame(records))["algorithms"]["tdpp"]["throughput_trend"] is None


def test_generate_report_files(tmp_path):
    metrics = tmp_path / "metrics.csv"
    with open(metrics, "w", newline="") as f:
        write_metrics_csv(sweep(), f)
    prefix = str(tmp_path / "report")
    report = generate_report(str(metrics), prefix)
    assert (tmp_path / "report.png").stat().st_size > 0
    assert json.loads((tmp_path / "report.json").read_text())["analysis"] == report["analysis"]
    markdown = (tmp_path / "report.md").read_text()
    assert "| tdpp |" in markdown
    assert "TDPP fidelity gap" in markdown
