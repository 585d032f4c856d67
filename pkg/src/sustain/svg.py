"""Tiny SVG writer for line charts and heatmaps. CSV stays the canonical output."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

_W, _H, _PAD = 480, 320, 48
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v):
    return f"{v:.4g}"


def _range(values):
    vals = [v for v in values if v is not None and math.isfinite(v)]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def line_chart(series: dict, x, title="", xlabel="", ylabel="") -> str:
    """``series`` maps a legend name to y values aligned with ``x``."""
    x = [float(v) for v in x]
    x0, x1 = _range(x)
    y0, y1 = _range([v for ys in series.values() for v in ys])

    def px(v):
        return _PAD + (v - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def py(v):
        return _H - _PAD - (v - y0) / (y1 - y0) * (_H - 2 * _PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
           f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
           f'<text x="{_W / 2}" y="20" text-anchor="middle">{escape(title)}</text>',
           f'<text x="{_W / 2}" y="{_H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{_H / 2}" transform="rotate(-90 14 {_H / 2})" text-anchor="middle">{escape(ylabel)}</text>']
    for v in (y0, (y0 + y1) / 2, y1):
        out.append(f'<text x="{_PAD - 4}" y="{py(v) + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    for v in x:
        out.append(f'<text x="{px(v):.1f}" y="{_H - _PAD + 14}" text-anchor="middle">{_fmt(v)}</text>')
    for i, (name, ys) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, ys) if b is not None and math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(f'<text x="{_W - _PAD}" y="{_PAD + 14 * i}" text-anchor="end" fill="{color}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(values, row_labels, col_labels, title="", lo=None, hi=None) -> str:
    """Grid of cells shaded from white (``lo``) to blue (``hi``); NaN cells are grey."""
    rows, cols = len(row_labels), len(col_labels)
    flat = [v for r in values for v in r]
    a, b = _range(flat)
    lo = a if lo is None else lo
    hi = b if hi is None else hi
    cw = (_W - 2 * _PAD) / max(cols, 1)
    ch = (_H - 2 * _PAD) / max(rows, 1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" font-family="sans-serif" font-size="10">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2}" y="20" text-anchor="middle">{escape(title)}</text>']
    for i in range(rows):
        for j in range(cols):
            v = values[i][j]
            if v is None or not math.isfinite(v):
                fill = "#bbbbbb"
            else:
                t = min(max((v - lo) / (hi - lo) if hi > lo else 0.5, 0.0), 1.0)
                fill = f"rgb({int(255 * (1 - t))},{int(255 * (1 - 0.6 * t))},255)"
            out.append(f'<rect x="{_PAD + j * cw:.1f}" y="{_PAD + i * ch:.1f}" width="{cw:.1f}" height="{ch:.1f}" fill="{fill}"/>')
        out.append(f'<text x="{_PAD - 4}" y="{_PAD + (i + 0.6) * ch:.1f}" text-anchor="end">{escape(str(row_labels[i]))}</text>')
    for j in range(cols):
        out.append(f'<text x="{_PAD + (j + 0.5) * cw:.1f}" y="{_H - _PAD + 14}" text-anchor="middle">{escape(str(col_labels[j]))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
