"""Minimal deterministic SVG charts: ensemble fan chart, grouped bars, heatmap.

Output depends only on the data; numbers are written with fixed precision so
identical inputs give identical bytes.
"""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .metrics import QUANTILES, EnsembleSummary

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
W, H = 640, 400
ML, MR, MT, MB = 60, 150, 30, 45


def _n(x: float) -> str:
    return f"{x:.2f}"


class _Canvas:
    def __init__(self, title: str, width: int = W, height: int = H):
        self.w = width
        self.h = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        ]

    def add(self, s: str) -> None:
        self.parts.append(s)

    def text(self, x, y, s, anchor="start", extra="") -> None:
        self.add(f'<text x="{_n(x)}" y="{_n(y)}" text-anchor="{anchor}"{extra}>{escape(str(s))}</text>')

    def save(self, path) -> None:
        self.parts.append("</svg>")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.parts) + "\n")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


def _label(v: float) -> str:
    return f"{v:g}"


def _axes(c: _Canvas, x0, x1, y0, y1, xlabel, ylabel):
    pw, ph = c.w - ML - MR, c.h - MT - MB

    def sx(x):
        return ML + (x - x0) / (x1 - x0 or 1.0) * pw

    def sy(y):
        return MT + ph - (y - y0) / (y1 - y0 or 1.0) * ph

    c.add(f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for t in _ticks(x0, x1):
        c.add(f'<line x1="{_n(sx(t))}" y1="{MT + ph}" x2="{_n(sx(t))}" y2="{MT + ph + 4}" stroke="#444"/>')
        c.text(sx(t), MT + ph + 16, _label(t), "middle")
    for t in _ticks(y0, y1):
        c.add(f'<line x1="{ML - 4}" y1="{_n(sy(t))}" x2="{ML}" y2="{_n(sy(t))}" stroke="#444"/>')
        c.text(ML - 6, sy(t) + 4, _label(t), "end")
    c.text(ML + pw / 2, c.h - 8, xlabel, "middle")
    c.text(14, MT + ph / 2, ylabel, "middle", f' transform="rotate(-90 14 {_n(MT + ph / 2)})"')
    return sx, sy


def _legend(c: _Canvas, names: Sequence[str]) -> None:
    x = c.w - MR + 12
    for i, name in enumerate(names):
        y = MT + 14 + 16 * i
        col = PALETTE[i % len(PALETTE)]
        c.add(f'<rect x="{x}" y="{y - 9}" width="12" height="10" fill="{col}"/>')
        c.text(x + 16, y, name)


def fan_chart(path, summaries: dict[str, EnsembleSummary], title: str, ylabel: str) -> None:
    """Median lines with 2.5-97.5% and 25-75% bands for each arm."""
    c = _Canvas(title)
    if not summaries:
        c.save(path)
        return
    lo_q, hi_q = QUANTILES[0], QUANTILES[-1]
    xs = [s.times for s in summaries.values()]
    x0 = min(float(t.min()) for t in xs)
    x1 = max(float(t.max()) for t in xs)
    y0 = min(0.0, min(float(s.quantiles[lo_q].min()) for s in summaries.values()))
    y1 = max(float(s.quantiles[hi_q].max()) for s in summaries.values())
    if y1 <= y0:
        y1 = y0 + 1.0
    sx, sy = _axes(c, x0, x1, y0, y1, "years after burn-in", ylabel)
    for i, (name, s) in enumerate(summaries.items()):
        col = PALETTE[i % len(PALETTE)]
        for a, b, op in ((QUANTILES[0], QUANTILES[-1], 0.15), (QUANTILES[1], QUANTILES[-2], 0.3)):
            top = " ".join(f"{_n(sx(t))},{_n(sy(v))}" for t, v in zip(s.times, s.quantiles[b]))
            bot = " ".join(
                f"{_n(sx(t))},{_n(sy(v))}" for t, v in zip(s.times[::-1], s.quantiles[a][::-1])
            )
            c.add(f'<polygon points="{top} {bot}" fill="{col}" fill-opacity="{op}" stroke="none"/>')
        pts = " ".join(f"{_n(sx(t))},{_n(sy(v))}" for t, v in zip(s.times, s.median))
        c.add(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
    if y0 < 0 < y1:
        c.add(f'<line x1="{ML}" y1="{_n(sy(0))}" x2="{c.w - MR}" y2="{_n(sy(0))}" stroke="#888" stroke-dasharray="3,3"/>')
    _legend(c, list(summaries))
    c.save(path)


def bar_chart(path, labels: Sequence[str], series: dict[str, Sequence[float]], title: str, ylabel: str) -> None:
    """Grouped bars, one group per label and one bar per series."""
    c = _Canvas(title)
    vals = [float(v) for vs in series.values() for v in vs]
    y1 = max(vals + [0.0]) or 1.0
    pw, ph = c.w - ML - MR, c.h - MT - MB
    _, sy = _axes(c, 0.0, 1.0, 0.0, y1, "", ylabel)
    # the numeric x ticks from _axes are meaningless here; cover them
    c.add(f'<rect x="{ML - 1}" y="{MT + ph + 1}" width="{pw + 2}" height="22" fill="white"/>')
    groups = max(1, len(labels))
    gw = pw / groups
    k = max(1, len(series))
    bw = gw * 0.8 / k
    for gi, lab in enumerate(labels):
        gx = ML + gi * gw + gw * 0.1
        for si, vs in enumerate(series.values()):
            v = float(vs[gi])
            y = sy(v)
            c.add(
                f'<rect x="{_n(gx + si * bw)}" y="{_n(y)}" width="{_n(bw)}" height="{_n(MT + ph - y)}" '
                f'fill="{PALETTE[si % len(PALETTE)]}"/>'
            )
        c.text(ML + gi * gw + gw / 2, MT + ph + 14, lab, "middle", ' font-size="9"')
    _legend(c, list(series))
    c.save(path)


def heatmap(path, matrix: np.ndarray, labels: Sequence[str], title: str) -> None:
    """Square heatmap on a white-to-dark-blue scale; row 0 at the bottom."""
    n = matrix.shape[0]
    size = 520
    c = _Canvas(title, width=size + 140, height=size + 80)
    cell = size / max(n, 1)
    top = float(matrix.max()) if matrix.size else 0.0
    for i in range(n):
        for j in range(n):
            f = float(matrix[i, j]) / top if top > 0 else 0.0
            r = int(round(255 - f * (255 - 8)))
            g = int(round(255 - f * (255 - 48)))
            b = int(round(255 - f * (255 - 107)))
            x = 70 + j * cell
            y = 30 + (n - 1 - i) * cell
            c.add(f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(cell)}" height="{_n(cell)}" fill="rgb({r},{g},{b})"/>')
    step = max(1, n // 8)
    for k in range(0, n, step):
        c.text(70 + (k + 0.5) * cell, 30 + size + 14, labels[k], "middle", ' font-size="9"')
        c.text(66, 30 + (n - 1 - k + 0.5) * cell + 3, labels[k], "end", ' font-size="9"')
    c.text(70 + size / 2, 30 + size + 32, "contact age", "middle")
    c.text(70 + size + 10, 40, f"max {top:.3g}/day")
    c.save(path)
