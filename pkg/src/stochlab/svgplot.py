"""Minimal self-contained SVG line plots for reports and trajectories."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .errors import DomainError, ParameterError
from .harness import Report, Series

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=40, bottom=50)
COLORS = ("#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d35400", "#16a085", "#7f8c8d")


def _collect(source) -> tuple[list[Series], str, bool]:
    if isinstance(source, Report):
        series = list(source.series)
        if not series and source.table is not None and len(source.table.columns) >= 2 and source.table.rows:
            cols = list(zip(*source.table.rows))
            series = [Series(name, list(cols[0]), list(col)) for name, col in zip(source.table.columns[1:], cols[1:])]
        return series, source.experiment, source.loglog
    if isinstance(source, Series):
        return [source], source.label, False
    if hasattr(source, "times") and hasattr(source, "states"):
        times = [float(t) for t in source.times]
        states = source.states
        return [Series(f"species {j}", times, [float(v) for v in states[:, j]])
                for j in range(states.shape[1])], "trajectory", False
    return list(source), "", False


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _label(v: float, log: bool) -> str:
    if log:
        return f"1e{int(round(v))}"
    return f"{v:.4g}"


def render_svg(series: Sequence[Series], title: str = "", loglog: bool = False,
               xlabel: str = "", ylabel: str = "") -> str:
    """SVG text with one polyline per series, axes, ticks and a legend."""
    series = [s for s in series]
    if not series or all(len(s.x) == 0 for s in series):
        raise ParameterError("nothing to plot: no series or only empty series")
    pts = []
    for s in series:
        if len(s.x) != len(s.y):
            raise ParameterError(f"series {s.label!r} has mismatched x and y lengths")
        if len(s.x) == 0:
            raise ParameterError(f"series {s.label!r} is empty")
        xs, ys = [float(v) for v in s.x], [float(v) for v in s.y]
        for v in xs + ys:
            if not math.isfinite(v):
                raise DomainError(f"series {s.label!r} contains the non-finite value {v}")
            if loglog and v <= 0:
                raise DomainError(f"log-log plot needs positive values; series {s.label!r} contains {v}")
        if loglog:
            xs, ys = [math.log10(v) for v in xs], [math.log10(v) for v in ys]
        pts.append((s.label, xs, ys))
    x_lo = min(min(x) for _, x, _ in pts)
    x_hi = max(max(x) for _, x, _ in pts)
    y_lo = min(min(y) for _, _, y in pts)
    y_hi = max(max(y) for _, _, y in pts)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return top + ph - (v - y_lo) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for t in _ticks(x_lo, x_hi):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle">{_label(t, loglog)}</text>')
    for t in _ticks(y_lo, y_hi):
        y = sy(t)
        out.append(f'<line x1="{left - 5}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end">{_label(t, loglog)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, xs, ys) in enumerate(pts):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = top + 12 + 14 * i
        out.append(f'<text x="{left + pw - 8}" y="{ly}" text-anchor="end" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(source, path, title: str | None = None, loglog: bool | None = None) -> Path:
    """Write an SVG plot of a report, trajectory, series or list of series.

    Log-log mode defaults to the report's own flag. An unwritable path
    raises the underlying ``OSError``.
    """
    series, default_title, default_log = _collect(source)
    svg = render_svg(series, title if title is not None else default_title,
                     default_log if loglog is None else loglog)
    path = Path(path)
    path.write_text(svg, encoding="utf-8")
    return path
