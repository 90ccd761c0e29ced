"""Minimal deterministic SVG charts.

Every plotted series also carries its exact data in ``data-x`` / ``data-y``
attributes (shortest round-trip floats), so a reader can recompute what was
drawn without parsing pixel coordinates.
"""

from __future__ import annotations

import re
from typing import Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 64, "right": 120, "top": 40, "bottom": 48}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _numbers(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _scale(lo: float, hi: float, a: float, b: float):
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<text x="{(MARGIN["left"] + WIDTH - MARGIN["right"]) // 2}" y="{HEIGHT - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT // 2})">{escape(ylabel)}</text>',
    ]


def _axes(x0, x1, y0, y1, xticks, yticks, sx, sy) -> list[str]:
    out = [
        f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for t in xticks:
        x = _fmt(sx(t))
        out.append(f'<line x1="{x}" y1="{y1}" x2="{x}" y2="{y1 + 4}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{y1 + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{t:g}</text>')
    for t in yticks:
        y = _fmt(sy(t))
        out.append(f'<line x1="{x0 - 4}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{y}" text-anchor="end" dominant-baseline="middle" font-family="sans-serif" font-size="10">{t:.3g}</text>')
    return out


def line_chart(
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    title: str,
    xlabel: str = "period",
    ylabel: str = "outcome",
    marker_x: float | None = None,
    marker_label: str = "",
) -> str:
    """One polyline per named series; optional dashed vertical marker (e.g. adoption)."""
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    sx = _scale(xs.min(), xs.max(), x0, x1)
    pad = 0.05 * (ys.max() - ys.min() or 1.0)
    sy = _scale(ys.min() - pad, ys.max() + pad, y1, y0)
    out = _frame(title, xlabel, ylabel)
    xticks = np.unique(xs)
    yticks = np.linspace(ys.min(), ys.max(), 5)
    out += _axes(x0, x1, y0, y1, xticks, yticks, sx, sy)
    if marker_x is not None:
        mx = _fmt(sx(marker_x))
        out.append(f'<line x1="{mx}" y1="{y0}" x2="{mx}" y2="{y1}" stroke="gray" stroke-dasharray="4 3" data-marker={quoteattr(repr(float(marker_x)))}/>')
        if marker_label:
            out.append(f'<text x="{mx}" y="{y0 - 4}" text-anchor="middle" font-family="sans-serif" font-size="10">{escape(marker_label)}</text>')
    for k, (name, (x, y)) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x, y))
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}" '
            f"data-series={quoteattr(name)} data-x={quoteattr(_numbers(x))} data-y={quoteattr(_numbers(y))}/>"
        )
        ly = y0 + 16 * k + 8
        out.append(f'<line x1="{x1 + 10}" y1="{ly}" x2="{x1 + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x1 + 32}" y="{ly}" dominant-baseline="middle" font-family="sans-serif" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def histogram(
    groups: Mapping[str, Sequence[float]],
    title: str,
    bins: int = 20,
    value_range: tuple[float, float] = (0.0, 1.0),
    xlabel: str = "value",
) -> str:
    """Overlaid histograms on shared bin edges; counts carried in ``data-counts``."""
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    counts = {name: np.histogram(np.asarray(v, dtype=float), bins=edges)[0] for name, v in groups.items()}
    top = max([int(c.max()) for c in counts.values()] + [1])
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    sx = _scale(edges[0], edges[-1], x0, x1)
    sy = _scale(0.0, float(top), y1, y0)
    out = _frame(title, xlabel, "count")
    out += _axes(x0, x1, y0, y1, edges[:: max(1, bins // 5)], np.linspace(0, top, 5), sx, sy)
    for k, (name, c) in enumerate(counts.items()):
        color = PALETTE[k % len(PALETTE)]
        out.append(
            f"<g data-series={quoteattr(name)} data-edges={quoteattr(_numbers(edges))} "
            f"data-counts={quoteattr(' '.join(str(int(v)) for v in c))}>"
        )
        for j, n in enumerate(c):
            if n == 0:
                continue
            xa, xb = sx(edges[j]), sx(edges[j + 1])
            out.append(
                f'<rect x="{_fmt(xa)}" y="{_fmt(sy(n))}" width="{_fmt(xb - xa)}" height="{_fmt(y1 - sy(n))}" '
                f'fill="{color}" fill-opacity="0.45" stroke="{color}"/>'
            )
        out.append("</g>")
        ly = y0 + 16 * k + 8
        out.append(f'<rect x="{x1 + 10}" y="{ly - 5}" width="18" height="10" fill="{color}" fill-opacity="0.45"/>')
        out.append(f'<text x="{x1 + 32}" y="{ly}" dominant-baseline="middle" font-family="sans-serif" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


_ATTR_RE = re.compile(r'data-series="([^"]*)" data-x="([^"]*)" data-y="([^"]*)"')


def read_series(svg: str) -> dict[str, tuple[list[float], list[float]]]:
    """Recover the exact data behind each polyline of a :func:`line_chart`."""
    return {
        name: ([float(v) for v in xs.split()], [float(v) for v in ys.split()]) for name, xs, ys in _ATTR_RE.findall(svg)
    }
