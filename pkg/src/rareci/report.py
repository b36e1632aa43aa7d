"""Pivot tables and minimal SVG charts of coverage-study results.

Each sampling index gets a CSV pivot per metric (budget rows, method
columns) and one SVG with two panels: coverage error on the left and mean
interval width on a log axis on the right.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

from .core import InputError
from .simulator import CoverageReport, CoverageRow

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
PANEL_W, PANEL_H = 420, 300
MARGIN = dict(left=60, right=20, top=30, bottom=45)


class EmptyReport(InputError):
    pass


def pivot(rows: list[CoverageRow], metric: str) -> tuple[list[float], list[str], dict]:
    budgets = sorted({r.budget for r in rows})
    methods = list(dict.fromkeys(r.method for r in rows))
    table = {(r.budget, r.method): getattr(r, metric) for r in rows}
    return budgets, methods, table


def write_pivot_csv(path, rows: list[CoverageRow], metric: str) -> None:
    budgets, methods, table = pivot(rows, metric)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["budget", *methods])
        for b in budgets:
            out.writerow([b, *[table.get((b, m), "") for m in methods]])


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _panel(rows, metric, title, x0, log_y=False) -> list[str]:
    budgets, methods, table = pivot(rows, metric)
    values = [v for v in table.values() if isinstance(v, float) and math.isfinite(v) and (v > 0 or not log_y)]
    x_lo, x_hi = min(budgets), max(budgets)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5 * (abs(x_lo) or 1), x_hi + 0.5 * (abs(x_hi) or 1)
    if log_y:
        y_lo = math.log10(min(values)) if values else 0.0
        y_hi = math.log10(max(values)) if values else 1.0
    else:
        y_lo, y_hi = 0.0, max(values + [1e-9]) if values else 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5

    left, top = x0 + MARGIN["left"], MARGIN["top"]
    w = PANEL_W - MARGIN["left"] - MARGIN["right"]
    h = PANEL_H - MARGIN["top"] - MARGIN["bottom"]

    def sx(b):
        return left + (b - x_lo) / (x_hi - x_lo) * w

    def sy(v):
        v = math.log10(v) if log_y else v
        return top + h - (v - y_lo) / (y_hi - y_lo) * h

    out = [f'<g class="panel" data-metric="{metric}">']
    out.append(f'<text x="{left + w / 2:.1f}" y="{top - 10}" text-anchor="middle" font-size="13">{escape(title)}</text>')
    out.append(f'<line x1="{left}" y1="{top + h}" x2="{left + w}" y2="{top + h}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + h}" stroke="black"/>')
    for t in _ticks(x_lo, x_hi):
        out.append(f'<text x="{sx(t):.1f}" y="{top + h + 16}" text-anchor="middle" font-size="10">{t:.3g}</text>')
    for t in _ticks(y_lo, y_hi):
        label = f"{10 ** t:.3g}" if log_y else f"{t:.3g}"
        yy = top + h - (t - y_lo) / (y_hi - y_lo) * h
        out.append(f'<text x="{left - 6}" y="{yy + 3:.1f}" text-anchor="end" font-size="10">{label}</text>')
    out.append(f'<text x="{left + w / 2:.1f}" y="{top + h + 34}" text-anchor="middle" font-size="11">budget ratio</text>')

    for i, m in enumerate(methods):
        color = PALETTE[i % len(PALETTE)]
        pts = [
            (sx(b), sy(table[(b, m)]))
            for b in budgets
            if (b, m) in table and math.isfinite(table[(b, m)]) and (table[(b, m)] > 0 or not log_y)
        ]
        if len(pts) > 1:
            coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2.5" fill="{color}"/>')
        ly = top + 12 + 14 * i
        out.append(f'<line x1="{left + w - 70}" y1="{ly}" x2="{left + w - 55}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + w - 50}" y="{ly + 4}" font-size="10">{escape(m)}</text>')
    out.append("</g>")
    return out


def render_svg(rows: list[CoverageRow], gamma: str) -> str:
    width, height = 2 * PANEL_W, PANEL_H
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>gamma={escape(gamma)}</title>",
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    parts += _panel(rows, "coverage_error", f"coverage error (gamma={gamma})", 0)
    parts += _panel(rows, "mean_width", f"mean width, log scale (gamma={gamma})", PANEL_W, log_y=True)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in ".-" else "_" for c in text)


def write_report(report: CoverageReport, out_prefix) -> list[Path]:
    """Write pivots and charts per sampling index; returns the written paths."""
    if not report.rows:
        raise EmptyReport("no rows")
    by_gamma: dict[str, list[CoverageRow]] = defaultdict(list)
    for row in report.rows:
        by_gamma[row.gamma].append(row)
    prefix = Path(out_prefix)
    if prefix.parent and not prefix.parent.exists():
        prefix.parent.mkdir(parents=True)
    written = []
    for gamma, rows in by_gamma.items():
        stem = f"{prefix}_gamma-{_slug(gamma)}"
        for metric in ("coverage_error", "mean_width"):
            path = Path(f"{stem}_{metric}.csv")
            write_pivot_csv(path, rows, metric)
            written.append(path)
        svg = Path(f"{stem}.svg")
        svg.write_text(render_svg(rows, gamma), encoding="utf-8")
        written.append(svg)
    return written
