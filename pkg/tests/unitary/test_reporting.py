import json
import math
import re
from xml.etree import ElementTree

import numpy as np
import pytest

from bdr.bayes_boot import ATEDistribution
from bdr.core import EstimatorConfig
from bdr.estimators import EstimateReport, FrequentistEstimate, ReportKind
from bdr.reporting import (
    HISTOGRAM_BINS,
    SCHEMA_VERSION,
    dump_json,
    dumps,
    estimate_document,
    estimate_table,
    histogram_svg,
    load_report,
    merge_reports,
    overlaid_histogram_svg,
    render_table,
    simulation_document,
    simulation_table,
)
from bdr.sim import DgpParams, run_simulation_study, simulation_config
from bdr.util.exceptions import DataFileError, MalformedReportError, ReportSchemaError

SVG_NS = "{http://www.w3.org/2000/svg}"


def _report(kind=ReportKind.DR, seed=3, mean=5.0, frequentist=True):
    samples = np.random.default_rng(seed).normal(mean, 0.2, size=200)
    return EstimateReport(
        kind=kind,
        bayes=ATEDistribution.from_samples(samples),
        config=EstimatorConfig(bootstrap_reps=200, rng_seed=seed),
        n=1000,
        frequentist=FrequentistEstimate(mean + 0.01, 0.21, 100) if frequentist else None,
    )


def _document(*reports, samples=True):
    return json.loads(dumps(estimate_document(list(reports), include_samples=samples)))


def test_dumps_is_strict_and_sorted():
    text = dumps({"b": float("nan"), "a": np.float64(1.5), "c": np.arange(2)})
    assert json.loads(text) == {"a": 1.5, "b": None, "c": [0, 1]}
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")


def test_estimate_document():
    doc = _document(_report(), _report(ReportKind.OR))
    assert doc["schema_version"] == SCHEMA_VERSION
    assert doc["artifact"] == "estimate"
    assert doc["seed"] == 3
    assert doc["config"]["rng_seed"] == 3
    assert [r["kind"] for r in doc["reports"]] == ["DR", "OR"]
    assert len(doc["reports"][0]["bayes"]["samples"]) == 200
    with pytest.raises(ValueError):
        estimate_document([])


def test_load_report_round_trip(tmp_path):
    doc = estimate_document([_report()], source={"path": "data.csv"})
    path = dump_json(doc, tmp_path / "estimate.json")
    loaded = load_report(path)
    assert loaded["source"] == {"path": "data.csv"}
    expected = doc["reports"][0]["bayes"]["mean"]
    assert loaded["reports"][0]["bayes"]["mean"] == pytest.approx(expected)


def test_load_report_rejects(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(MalformedReportError):
        load_report(bad)

    bad.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(MalformedReportError):
        load_report(bad)

    bad.write_text(json.dumps({"schema_version": 2, "artifact": "estimate", "reports": []}))
    with pytest.raises(ReportSchemaError) as e:
        load_report(bad)
    assert e.value.found == 2

    bad.write_text(json.dumps({"schema_version": SCHEMA_VERSION, "artifact": "simulation"}))
    with pytest.raises(MalformedReportError):
        load_report(bad)


SUMMARY = {"mean": 1.0, "sd": 0.1, "credible_interval_95": [0.9, 1.1]}


@pytest.mark.parametrize(
    "entry",
    [
        {"label": "DR"},
        {"label": "DR", "kind": "DR", "bayes": {"mean": 1.0}},
        {"label": "DR", "kind": "DR", "bayes": {"mean": 1.0, "sd": 0.1}},
        {"label": "DR", "kind": "DR", "bayes": {**SUMMARY, "samples": 3}},
        "DR",
    ],
)
def test_load_report_rejects_incomplete_entries(tmp_path, entry):
    doc = estimate_document([_report()])
    doc["reports"].append(entry)
    path = dump_json(doc, tmp_path / "partial.json")
    with pytest.raises(MalformedReportError) as e:
        load_report(path)
    assert "report 1" in str(e.value)


def test_load_report_missing_file(tmp_path):
    with pytest.raises(DataFileError):
        load_report(tmp_path / "absent.json")


def test_merge_disambiguates_labels():
    a = _document(_report(), _report(ReportKind.OR))
    b = _document(_report(seed=4))
    labels = [r["label"] for r in merge_reports([("a", a), ("b", b)])]
    assert labels == ["DR (a)", "OR", "DR (b)"]

    labels = [r["label"] for r in merge_reports([("run", a), ("run", a)])]
    assert labels == ["DR (run)", "OR (run)", "DR (run) #2", "OR (run) #2"]


def test_merge_single_source_is_unchanged():
    doc = _document(_report(), _report(ReportKind.IPW))
    assert merge_reports([("x", doc)]) == doc["reports"]


def test_estimate_table_text():
    doc = _document(_report(), _report(ReportKind.NAIVE_FULL, frequentist=False))
    text = render_table(estimate_table(doc["reports"]), [doc])
    assert "Posterior mean" in text
    assert "NAIVE_FULL" in text
    assert "% change" not in text
    lines = text.splitlines()
    assert lines[-2] == "seed: 3"
    assert lines[-1].startswith("config: ")
    assert json.loads(lines[-1][len("config: "):]) == doc["config"]


def test_estimate_table_percent_change():
    doc = _document(_report().with_baseline(-20.0))
    text = render_table(estimate_table(doc["reports"]))
    assert "% change" in text
    assert re.search(r"-25\.\d", text)
    assert "seed:" not in text


def test_provenance_lists_each_source_once():
    doc = _document(_report())
    other = _document(_report(seed=9))
    text = render_table(estimate_table(doc["reports"]), [doc, doc, other])
    assert text.count("seed: ") == 2


def test_simulation_table():
    report = run_simulation_study(2, DgpParams(n=100), simulation_config(L=10, V=10, seed=1))
    doc = json.loads(dumps(simulation_document(report)))
    assert doc["artifact"] == "simulation"
    text = render_table(simulation_table(doc), [doc])
    for name in ("BOR1", "BOR2", "BDR1", "BDR2", "BDR3"):
        assert name in text
    assert "Emp. Var." in text
    assert "seed: 1" in text


def test_histogram_svg():
    samples = np.random.default_rng(0).normal(5.0, 0.3, size=1000)
    svg = histogram_svg(samples, {"seed": 12, "config": {"bootstrap_reps": 1000}})
    root = ElementTree.fromstring(svg)
    assert root.tag == f"{SVG_NS}svg"
    meta = json.loads(root.find(f"{SVG_NS}desc").text)
    assert meta == {"config": {"bootstrap_reps": 1000}, "seed": 12}

    bars = [r for r in root.iter(f"{SVG_NS}rect") if r.get("fill-opacity")]
    assert 0 < len(bars) <= HISTOGRAM_BINS
    polyline = root.find(f"{SVG_NS}polyline")
    assert len(polyline.get("points").split()) == HISTOGRAM_BINS


def test_histogram_svg_density_integrates_to_one():
    samples = np.random.default_rng(1).normal(size=500)
    svg = histogram_svg(samples, {}, bins=10)
    root = ElementTree.fromstring(svg)
    bars = [r for r in root.iter(f"{SVG_NS}rect") if r.get("fill-opacity")]
    # bar areas in pixel space are proportional to density * bin width
    areas = sum(float(b.get("width")) * float(b.get("height")) for b in bars)
    assert areas > 0 and math.isfinite(areas)


def test_histogram_svg_edge_cases():
    with pytest.raises(ValueError):
        histogram_svg([], {})
    svg = histogram_svg(np.full(10, 2.5), {"title": "<&>"})
    ElementTree.fromstring(svg)


def test_overlaid_histogram_svg():
    series = [("DR (a)", np.random.default_rng(0).normal(5, 1, 300)),
              ("DR (b)", np.random.default_rng(1).normal(6, 1, 300))]
    root = ElementTree.fromstring(overlaid_histogram_svg(series, {"sources": []}))
    assert len(root.findall(f"{SVG_NS}polyline")) == 2
    texts = [t.text for t in root.iter(f"{SVG_NS}text")]
    assert "DR (a)" in texts and "DR (b)" in texts
    with pytest.raises(ValueError):
        overlaid_histogram_svg([], {})
