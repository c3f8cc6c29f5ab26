"""
Report artifacts: versioned JSON documents, rich text tables and SVG
histograms of posterior predictive ATE samples.

Every artifact carries the seed and the full estimator config it was
produced with.
"""
import io
import json
import math
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np
from rich.console import Console
from rich.table import Table

from bdr.util.exceptions import DataFileError, MalformedReportError, ReportSchemaError

SCHEMA_VERSION = 1
TABLE_WIDTH = 120
HISTOGRAM_BINS = 20

SVG_WIDTH = 640
SVG_HEIGHT = 400
SVG_MARGIN = 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


# ------------------------------ JSON ------------------------------


def _jsonable(obj):
    # non-finite floats become null so that the output stays strict json
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(doc: dict) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def dump_json(doc: dict, path) -> Path:
    path = Path(path)
    path.write_text(dumps(doc), encoding="utf-8")
    return path


def estimate_document(
    reports, include_samples: bool = False, source: Optional[dict] = None
) -> dict:
    """
    One JSON document for the reports of a single `estimate` invocation.
    All reports share one config and seed.
    """
    if not reports:
        raise ValueError("no reports to serialize")
    config = reports[0].config
    return {
        "schema_version": SCHEMA_VERSION,
        "artifact": "estimate",
        "seed": config.rng_seed,
        "config": config.to_dict(),
        "source": source or {},
        "reports": [r.to_dict(include_samples) for r in reports],
    }


def simulation_document(report, include_estimates: bool = False) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "artifact": "simulation",
        **report.to_dict(include_estimates),
    }


def _check_report_entry(path: Path, i: int, entry) -> None:
    if not isinstance(entry, dict):
        raise MalformedReportError(str(path), f"report {i} is not an object")
    for key in ("label", "kind"):
        if not isinstance(entry.get(key), str):
            raise MalformedReportError(str(path), f"report {i} has no {key!r}")
    bayes = entry.get("bayes")
    if not isinstance(bayes, dict):
        raise MalformedReportError(str(path), f"report {i} has no 'bayes' summary")
    for key in ("mean", "sd"):
        if key not in bayes:
            raise MalformedReportError(str(path), f"report {i} has no 'bayes.{key}'")
    interval = bayes.get("credible_interval_95")
    if not (isinstance(interval, list) and len(interval) == 2):
        raise MalformedReportError(
            str(path), f"report {i} has no 'bayes.credible_interval_95' pair"
        )
    samples = bayes.get("samples")
    if samples is not None and not isinstance(samples, list):
        raise MalformedReportError(str(path), f"report {i}: 'bayes.samples' is not a list")


def load_report(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedReportError(str(path), f"invalid json: {e}") from e
    except (OSError, UnicodeDecodeError) as e:
        raise DataFileError(str(path), f"cannot read: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedReportError(str(path), "top level is not an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ReportSchemaError(str(path), version, SCHEMA_VERSION)
    if doc.get("artifact") != "estimate" or not isinstance(doc.get("reports"), list):
        raise MalformedReportError(str(path), "missing estimate reports")
    if "seed" not in doc or not isinstance(doc.get("config"), dict):
        raise MalformedReportError(str(path), "missing seed or config")
    for i, entry in enumerate(doc["reports"]):
        _check_report_entry(path, i, entry)
    return doc


def merge_reports(sources: Sequence[tuple[str, dict]]) -> list[dict]:
    """
    Flatten the reports of several estimate documents, making row labels
    unique: a label seen in more than one source gets the source name
    appended, and a number if that still collides.
    """
    entries = [(name, r) for name, doc in sources for r in doc["reports"]]
    counts: dict[str, int] = {}
    for _, r in entries:
        counts[r["label"]] = counts.get(r["label"], 0) + 1

    ret, seen = [], set()
    for name, r in entries:
        label = r["label"]
        if counts[label] > 1:
            label = f"{label} ({name})"
        base, i = label, 2
        while label in seen:
            label = f"{base} #{i}"
            i += 1
        seen.add(label)
        ret.append({**r, "label": label})
    return ret


# ------------------------------ tables ------------------------------


def _num(value, fmt: str = ".3f") -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return "-"
    return format(value, fmt)


def _create_table(title: str, columns: Sequence[str]) -> Table:
    table = Table(title=title)
    table.add_column(columns[0], justify="left", style="cyan", no_wrap=True)
    for c in columns[1:]:
        table.add_column(c, justify="right", style="magenta")
    return table


def estimate_table(reports: Sequence[dict], title: str = "Average treatment effect") -> Table:
    """
    Posterior summaries next to the frequentist bootstrap, one row per
    estimator report (as serialized by EstimateReport.to_dict).
    """
    with_pct = any(r.get("percent_change") is not None for r in reports)
    columns = [
        "Estimator",
        "Posterior mean",
        "s.d.",
        "95% cred. int.",
        "Freq. est.",
        "s.e.",
    ]
    if with_pct:
        columns.append("% change")
    table = _create_table(title, columns)

    for r in reports:
        bayes = r["bayes"]
        lo, hi = bayes["credible_interval_95"]
        freq = r.get("frequentist") or {}
        row = [
            r["label"],
            _num(bayes["mean"]),
            _num(bayes["sd"]),
            f"({_num(lo)}, {_num(hi)})",
            _num(freq.get("point")),
            _num(freq.get("se")),
        ]
        if with_pct:
            row.append(_num(r.get("percent_change"), ".1f"))
        table.add_row(*row)
    return table


def simulation_table(doc: dict) -> Table:
    title = (
        f"Posterior predictive simulation (true ATE {doc['true_ate']:g}, "
        f"{doc['runs']} runs, n={doc['n']})"
    )
    table = _create_table(title, ["Model", "Av. Est.", "Emp. Var.", "MSE"])
    for r in doc["rows"]:
        table.add_row(
            r["name"],
            _num(r["average_estimate"]),
            _num(r["empirical_variance"]),
            _num(r["mse"]),
        )
    return table


def _provenance(docs: Sequence[dict]) -> list[str]:
    lines, seen = [], set()
    for doc in docs:
        key = (doc["seed"], json.dumps(_jsonable(doc["config"]), sort_keys=True))
        if key in seen:
            continue
        seen.add(key)
        lines.append(f"seed: {key[0]}")
        lines.append(f"config: {key[1]}")
    return lines


def render_table(table: Table, docs: Sequence[dict] = ()) -> str:
    """
    Plain text rendering (no colour, fixed width) followed by the seed and
    config of every distinct source document.
    """
    buf = io.StringIO()
    console = Console(file=buf, width=TABLE_WIDTH, color_system=None, force_terminal=False)
    console.print(table)
    text = buf.getvalue()
    footer = _provenance(docs)
    if footer:
        text += "\n".join(footer) + "\n"
    return text


# ------------------------------ SVG ------------------------------


def _bin_edges(series: Sequence[np.ndarray], bins: int) -> np.ndarray:
    lo = min(float(s.min()) for s in series)
    hi = max(float(s.max()) for s in series)
    if not hi > lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def _density(samples: np.ndarray, edges: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(samples, bins=edges)
    return counts / (samples.size * (edges[1] - edges[0]))


class _Canvas:
    def __init__(self, edges: np.ndarray, ymax: float, title: str, metadata: dict):
        self.edges = edges
        self.ymax = ymax if ymax > 0 else 1.0
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" '
            f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
            f"<title>{escape(title)}</title>",
            f"<desc>{escape(json.dumps(_jsonable(metadata), sort_keys=True))}</desc>",
            '<rect width="100%" height="100%" fill="white"/>',
            f'<text x="{SVG_WIDTH / 2:.2f}" y="{SVG_MARGIN / 2:.2f}" '
            f'text-anchor="middle" font-size="14">{escape(title)}</text>',
        ]

    def x(self, v: float) -> float:
        lo, hi = self.edges[0], self.edges[-1]
        return SVG_MARGIN + (v - lo) / (hi - lo) * (SVG_WIDTH - 2 * SVG_MARGIN)

    def y(self, v: float) -> float:
        return SVG_HEIGHT - SVG_MARGIN - v / self.ymax * (SVG_HEIGHT - 2 * SVG_MARGIN)

    def axes(self, xlabel: str) -> None:
        x0, x1 = SVG_MARGIN, SVG_WIDTH - SVG_MARGIN
        y0, y1 = SVG_HEIGHT - SVG_MARGIN, SVG_MARGIN
        self.parts.append(
            f'<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>'
        )
        for v in (self.edges[0], (self.edges[0] + self.edges[-1]) / 2, self.edges[-1]):
            self.parts.append(
                f'<text x="{self.x(v):.2f}" y="{y0 + 16}" text-anchor="middle" '
                f'font-size="11">{v:.3g}</text>'
            )
        self.parts.append(
            f'<text x="{SVG_WIDTH / 2:.2f}" y="{SVG_HEIGHT - 10}" text-anchor="middle" '
            f'font-size="12">{escape(xlabel)}</text>'
        )
        self.parts.append(
            f'<text x="14" y="{SVG_HEIGHT / 2:.2f}" font-size="12" '
            f'transform="rotate(-90 14 {SVG_HEIGHT / 2:.2f})" text-anchor="middle">density</text>'
        )

    def bars(self, density: np.ndarray, color: str, opacity: float) -> None:
        base = self.y(0.0)
        for left, right, h in zip(self.edges[:-1], self.edges[1:], density):
            if h <= 0:
                continue
            top = self.y(h)
            self.parts.append(
                f'<rect x="{self.x(left):.2f}" y="{top:.2f}" '
                f'width="{self.x(right) - self.x(left):.2f}" height="{base - top:.2f}" '
                f'fill="{color}" fill-opacity="{opacity}" stroke="white" stroke-width="0.5"/>'
            )

    def polyline(self, density: np.ndarray, color: str) -> None:
        mids = (self.edges[:-1] + self.edges[1:]) / 2
        points = " ".join(f"{self.x(m):.2f},{self.y(h):.2f}" for m, h in zip(mids, density))
        self.parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>'
        )

    def vline(self, v: float, color: str) -> None:
        self.parts.append(
            f'<line x1="{self.x(v):.2f}" y1="{self.y(0.0):.2f}" x2="{self.x(v):.2f}" '
            f'y2="{SVG_MARGIN}" stroke="{color}" stroke-dasharray="4 3"/>'
        )

    def legend(self, labels: Sequence[str]) -> None:
        for i, label in enumerate(labels):
            y = SVG_MARGIN + 14 * i
            color = COLORS[i % len(COLORS)]
            self.parts.append(
                f'<rect x="{SVG_WIDTH - SVG_MARGIN - 150}" y="{y}" width="10" height="10" '
                f'fill="{color}"/>'
            )
            self.parts.append(
                f'<text x="{SVG_WIDTH - SVG_MARGIN - 135}" y="{y + 9}" '
                f'font-size="11">{escape(label)}</text>'
            )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def histogram_svg(
    samples,
    metadata: dict,
    title: str = "Posterior predictive distribution of the ATE",
    bins: int = HISTOGRAM_BINS,
) -> str:
    """
    Equal-width histogram of the samples (as a density), the empirical
    density polyline through the bin midpoints and a dashed line at the mean.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("cannot draw a histogram of no samples")
    edges = _bin_edges([samples], bins)
    density = _density(samples, edges)

    canvas = _Canvas(edges, float(density.max()) * 1.1, title, metadata)
    canvas.axes("average treatment effect")
    canvas.bars(density, COLORS[0], 0.6)
    canvas.polyline(density, "black")
    canvas.vline(float(samples.mean()), COLORS[1])
    return canvas.render()


def overlaid_histogram_svg(
    series: Sequence[tuple[str, np.ndarray]],
    metadata: dict,
    title: str = "Posterior predictive distributions of the ATE",
    bins: int = HISTOGRAM_BINS,
) -> str:
    if not series:
        raise ValueError("no sample series to draw")
    arrays = [np.asarray(s, dtype=np.float64) for _, s in series]
    edges = _bin_edges(arrays, bins)
    densities = [_density(s, edges) for s in arrays]

    canvas = _Canvas(edges, max(float(d.max()) for d in densities) * 1.1, title, metadata)
    canvas.axes("average treatment effect")
    for i, density in enumerate(densities):
        color = COLORS[i % len(COLORS)]
        canvas.bars(density, color, 0.25)
        canvas.polyline(density, color)
    canvas.legend([label for label, _ in series])
    return canvas.render()
