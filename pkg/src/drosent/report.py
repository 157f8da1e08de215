"""Sweep report CSV and SVG output."""

from __future__ import annotations

import csv
import math
from datetime import datetime, timezone
from pathlib import Path

from drosent.errors import DataFormatError
from drosent.pipeline import SweepReport, SweepRow

HEADER = ["set_kind", "radius", "in_dist_acc", "ood_acc"]
STD_HEADER = ["in_dist_std", "ood_std"]
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _acc(value):
    return "nan" if value is None or math.isnan(value) else f"{value:.4f}"


def format_report_csv(report, timestamp=True):
    lines = ["# drosent sweep report"]
    for key in sorted(report.metadata):
        lines.append(f"# {key}={report.metadata[key]}")
    if timestamp:
        lines.append(f"# timestamp={datetime.now(timezone.utc).isoformat(timespec='seconds')}")
    for row in report.rows:
        if row.error is not None:
            lines.append(f"# error {row.set_kind} R={row.radius:g}: {row.error}")
    with_std = any(r.in_dist_std is not None for r in report.rows)
    lines.append(",".join(HEADER + (STD_HEADER if with_std else [])))
    for r in report.rows:
        fields = [r.set_kind, f"{r.radius:g}", _acc(r.in_dist_acc), _acc(r.ood_acc)]
        if with_std:
            fields += [_acc(r.in_dist_std), _acc(r.ood_std)]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def write_report_csv(report, path, timestamp=True):
    Path(path).write_text(format_report_csv(report, timestamp), encoding="utf-8")


def read_report_csv(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc.strerror})") from exc
    metadata, errors, body = {}, {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("# error "):
            head, _, message = line[len("# error "):].partition(": ")
            errors[head] = message
        elif line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                metadata[key] = value
        elif line.strip():
            body.append((lineno, line))
    if not body or body[0][1].split(",")[:4] != HEADER:
        raise DataFormatError(f"{path}: missing header {','.join(HEADER)!r}")
    header = body[0][1].split(",")
    rows = []
    for lineno, line in body[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
        try:
            values = [float(v) for v in fields[1:]]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
        row = SweepRow(fields[0], values[0], values[1], values[2])
        if len(values) == 5:
            row.in_dist_std, row.ood_std = values[3], values[4]
        row.error = errors.get(f"{row.set_kind} R={row.radius:g}")
        rows.append(row)
    return SweepReport(rows, metadata)


def render_svg(report, width=640, height=400):
    """One polyline per set kind: x = radius, y = out-of-distribution accuracy."""
    rows = [r for r in report.rows if r.error is None and not math.isnan(r.ood_acc)]
    left, right, top, bottom = 64, 130, 40, 56
    plot_w, plot_h = width - left - right, height - top - bottom
    radii = sorted({r.radius for r in rows}) or [0.0, 1.0]
    x_lo, x_hi = radii[0], radii[-1]
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    accs = [r.ood_acc for r in rows] or [0.0, 1.0]
    y_lo = max(0.0, math.floor(min(accs) * 20) / 20 - 0.05)
    y_hi = min(1.0, math.ceil(max(accs) * 20) / 20 + 0.05)

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return top + (y_hi - y) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + plot_w / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
        'Out-of-distribution accuracy by projection radius</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for x in radii:
        out.append(f'<line x1="{sx(x):.1f}" y1="{top + plot_h}" x2="{sx(x):.1f}" y2="{top + plot_h + 5}" '
                   'stroke="black"/>')
        out.append(f'<text x="{sx(x):.1f}" y="{top + plot_h + 19}" text-anchor="middle">{x:g}</text>')
    steps = 5
    for i in range(steps + 1):
        y = y_lo + (y_hi - y_lo) * i / steps
        out.append(f'<line x1="{left - 5}" y1="{sy(y):.1f}" x2="{left}" y2="{sy(y):.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{sy(y) + 4:.1f}" text-anchor="end">{y:.2f}</text>')
    out.append(f'<text x="{left + plot_w / 2:.1f}" y="{height - 14}" text-anchor="middle">radius R</text>')
    out.append(f'<text x="16" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + plot_h / 2:.1f})">accuracy</text>')

    kinds = list(dict.fromkeys(r.set_kind for r in rows))
    for k, kind in enumerate(kinds):
        color = COLORS[k % len(COLORS)]
        pts = sorted((r.radius, r.ood_acc) for r in rows if r.set_kind == kind)
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
        ly = top + 10 + 20 * k
        lx = left + plot_w + 16
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}">{kind}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(report, path):
    Path(path).write_text(render_svg(report), encoding="utf-8")
