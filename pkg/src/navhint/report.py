"""Merged result tables and small SVG bar charts for eval and analysis outputs."""

from __future__ import annotations

import csv
import io
import json
from html import escape
from pathlib import Path
from typing import Mapping, Sequence

from .errors import SchemaError

EVAL_VERSION = "1.0"
METRIC_COLUMNS = ("ne", "sr", "spl", "cls", "ndtw", "sdtw")
QUALITY_COLUMNS = ("bleu1", "bleu4")


def eval_report(label: str, split: str, mode: str, metrics: Mapping, source: str | None = None) -> dict:
    return {"schema_version": EVAL_VERSION, "kind": "eval", "label": label, "split": split, "mode": mode,
            "metrics": dict(metrics), "source": source}


def load_json_report(path: str | Path, kind: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    version = str(data.get("schema_version", ""))
    if version.split(".")[0] != EVAL_VERSION.split(".")[0]:
        raise SchemaError(f"{path}: unsupported schema version {version!r}")
    if kind == "eval":
        if data.get("kind") != "eval" or not set(METRIC_COLUMNS) <= set(data.get("metrics", {})):
            raise SchemaError(f"{path}: not an eval report")
    elif kind == "analysis":
        if not {"bleu1", "ambiguity", "distinctive"} <= set(data):
            raise SchemaError(f"{path}: not an analysis report")
    return data


def _fmt(x) -> str:
    return "" if x is None else f"{float(x):.6f}"


def merged_table(evals: Sequence[dict], analyses: Sequence[dict | None]) -> str:
    """One CSV row per eval report, with navigation metrics and, when paired, BLEU columns."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "split", "mode", "count", *METRIC_COLUMNS, *QUALITY_COLUMNS])
    for i, ev in enumerate(evals):
        qa = analyses[i] if i < len(analyses) else None
        m = ev["metrics"]
        writer.writerow([ev["label"], ev["split"], ev["mode"], m.get("count", ""),
                         *(_fmt(m[c]) for c in METRIC_COLUMNS),
                         *(_fmt(qa.get(c)) if qa else "" for c in QUALITY_COLUMNS)])
    return buf.getvalue()


def bar_chart(title: str, groups: Sequence[str], series: Mapping[str, Sequence[float | None]],
              ymax: float | None = None, width: int = 520, height: int = 260) -> str:
    """Grouped vertical bars; ``series`` maps legend name -> one value per group."""
    colors = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")
    names = list(series)
    values = [v for vs in series.values() for v in vs if v is not None]
    top = ymax if ymax is not None else (max(values) if values else 1.0) or 1.0
    left, bottom, plot_h = 50, 40, height - 80
    plot_w = width - left - 20
    gw = plot_w / max(len(groups), 1)
    bw = gw * 0.8 / max(len(names), 1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{left}" y1="{height - bottom}" x2="{width - 20}" y2="{height - bottom}" stroke="black"/>',
           f'<line x1="{left}" y1="{height - bottom}" x2="{left}" y2="{height - bottom - plot_h}" stroke="black"/>',
           f'<text x="{left - 6}" y="{height - bottom - plot_h + 4}" text-anchor="end">{top:g}</text>',
           f'<text x="{left - 6}" y="{height - bottom + 4}" text-anchor="end">0</text>']
    for gi, group in enumerate(groups):
        x0 = left + gi * gw + gw * 0.1
        for si, name in enumerate(names):
            v = series[name][gi]
            if v is None:
                continue
            h = plot_h * min(float(v) / top, 1.0)
            x = x0 + si * bw
            y = height - bottom - h
            out.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bw:.1f}" height="{h:.1f}" '
                       f'fill="{colors[si % len(colors)]}"><title>{escape(name)}: {float(v):.4f}</title></rect>')
        out.append(f'<text x="{left + gi * gw + gw / 2:.1f}" y="{height - bottom + 14}" '
                   f'text-anchor="middle">{escape(group)}</text>')
    for si, name in enumerate(names):
        x = left + 10 + si * 110
        out.append(f'<rect x="{x}" y="{height - 16}" width="10" height="10" fill="{colors[si % len(colors)]}"/>')
        out.append(f'<text x="{x + 14}" y="{height - 7}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def navigation_plot(evals: Sequence[dict]) -> str:
    labels = [ev["label"] for ev in evals]
    return bar_chart("Navigation (SR / SPL / nDTW)", labels, {
        "SR": [ev["metrics"]["sr"] for ev in evals],
        "SPL": [ev["metrics"]["spl"] for ev in evals],
        "nDTW": [ev["metrics"]["ndtw"] for ev in evals],
    }, ymax=1.0)


def ambiguity_plot(analysis: dict) -> str:
    cats = list(analysis["ambiguity"])
    short = [c.replace("Landmarks", "") for c in cats]
    return bar_chart("Generated landmark ambiguity (TOTAL / TRUE)", short, {
        "TOTAL": [analysis["ambiguity"][c]["total"] for c in cats],
        "TRUE": [analysis["ambiguity"][c]["true"] for c in cats],
    })


def distinctive_plot(analysis: dict) -> str:
    d = analysis["distinctive"]
    buckets = ["right", "wrong"]
    return bar_chart("Distinctive objects accuracy", [f"{b} action" for b in buckets], {
        "exact": [d["exact"][b]["fraction"] for b in buckets],
        "object": [d["object"][b]["fraction"] for b in buckets],
    }, ymax=1.0)
