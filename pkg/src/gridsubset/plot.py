"""Dependency-free SVG line charts for training curves."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
WIDTH, HEIGHT = 800, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 30, 50


def read_curve(path: str | Path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: curve file has no data rows")
    header = [h.strip() for h in rows[0]]
    return header, [[float(v) for v in r] for r in rows[1:] if r]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(header: list[str], data: list[list[float]], title: str = "") -> str:
    """One polyline per metric column against the first column."""
    if not data:
        raise ValueError("empty curve")
    xs = [r[0] for r in data]
    series = []
    for c in range(1, len(header)):
        pts = [(r[0], r[c]) for r in data if math.isfinite(r[c])]
        series.append((header[c], pts))
    ys = [y for _, pts in series for _, y in pts] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x: float) -> float:
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y: float) -> float:
        return TOP + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="18" text-anchor="middle">{escape(title)}</text>')
    out.append(
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>'
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>'
    )
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        out.append(
            f'<text x="{_fmt(sx(xv))}" y="{TOP + ph + 16}" text-anchor="middle">{xv:g}</text>'
        )
        out.append(
            f'<text x="{LEFT - 6}" y="{_fmt(sy(yv) + 4)}" text-anchor="end">{yv:.3g}</text>'
        )
    out.append(
        f'<text x="{LEFT + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(header[0])}</text>'
    )
    out.append(
        f'<text x="16" y="{TOP + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {TOP + ph / 2})">value</text>'
    )
    for i, (name, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        out.append(
            f'<polyline data-metric="{escape(name)}" fill="none" stroke="{color}" '
            f'stroke-width="1.5" points="{coords}"/>'
        )
        ly = TOP + 10 + 18 * i
        out.append(
            f'<line x1="{WIDTH - RIGHT + 15}" y1="{ly}" x2="{WIDTH - RIGHT + 35}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
            f'<text x="{WIDTH - RIGHT + 40}" y="{ly + 4}">{escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_curve(curve_csv: str | Path, out_path: str | Path, title: str = "") -> None:
    header, data = read_curve(curve_csv)
    Path(out_path).write_text(render_svg(header, data, title or Path(curve_csv).stem))
