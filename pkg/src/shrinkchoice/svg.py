"""Minimal static SVG charts.

Only what the report commands need: line series, filled or hollow point
series, vertical error bars and horizontal reference lines.  Output is a
pure function of the input (fixed number formatting, no timestamps), so the
same figure always produces the same bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["Series", "HLine", "Figure", "LINE_STYLES", "render", "write_svg"]

# Fixed mapping used across all comparison plots.
LINE_STYLES = {"shrinkage": "solid", "ces": "dotted", "pooling": "dashed"}
_DASH = {"solid": None, "dotted": "2,3", "dashed": "8,4"}

_W, _H = 640, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 150, 40, 55


@dataclass
class Series:
    """One plotted series.

    Attributes:
        kind: ``"line"``, ``"points"`` (filled) or ``"hollow"``.
        style: Dash style for lines, one of ``solid``, ``dotted``, ``dashed``.
        err: Optional half-widths drawn as vertical bars.
    """

    name: str
    x: Sequence[float]
    y: Sequence[float]
    kind: str = "line"
    style: str = "solid"
    color: str = "#000000"
    err: Optional[Sequence[float]] = None


@dataclass
class HLine:
    y: float
    name: str
    color: str = "#000000"
    style: str = "solid"


@dataclass
class Figure:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    hlines: list = field(default_factory=list)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.3g}"
    return f"{v:.6g}"


def _extent(fig: Figure):
    xs, ys = [], []
    for s in fig.series:
        x = np.asarray(s.x, float)
        y = np.asarray(s.y, float)
        keep = np.isfinite(x) & np.isfinite(y)
        xs.append(x[keep])
        ys.append(y[keep])
        if s.err is not None:
            e = np.asarray(s.err, float)[keep]
            ys.extend([y[keep] - e, y[keep] + e])
    ys.append(np.array([h.y for h in fig.hlines], float))
    x = np.concatenate(xs) if xs else np.array([0.0, 1.0])
    y = np.concatenate(ys)
    if x.size == 0:
        x = np.array([0.0, 1.0])
    if y.size == 0:
        y = np.array([0.0, 1.0])
    return float(x.min()), float(x.max()), float(y.min()), float(y.max())


def render(fig: Figure) -> str:
    """Render ``fig`` to an SVG document string."""
    x0, x1, y0, y1 = _extent(fig)
    xt = _nice_ticks(x0, x1)
    yt = _nice_ticks(y0, y1)
    x0, x1 = min(x0, xt[0]), max(x1, xt[-1])
    y0, y1 = min(y0, yt[0]), max(y1, yt[-1])
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def px(v):
        return _LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _TOP + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="#ffffff"/>',
        f'<text x="{_W / 2:.0f}" y="20" text-anchor="middle" font-size="13">{escape(fig.title)}</text>',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>',
    ]
    for t in xt:
        if x0 <= t <= x1:
            out.append(
                f'<line x1="{_fmt(px(t))}" y1="{_TOP + ph}" x2="{_fmt(px(t))}" y2="{_TOP + ph + 4}" stroke="#000000"/>'
                f'<text x="{_fmt(px(t))}" y="{_TOP + ph + 16}" text-anchor="middle">{_label(t)}</text>'
            )
    for t in yt:
        if y0 <= t <= y1:
            out.append(
                f'<line x1="{_LEFT - 4}" y1="{_fmt(py(t))}" x2="{_LEFT}" y2="{_fmt(py(t))}" stroke="#000000"/>'
                f'<text x="{_LEFT - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{_label(t)}</text>'
            )
    out.append(
        f'<text x="{_LEFT + pw / 2:.0f}" y="{_H - 15}" text-anchor="middle">{escape(fig.xlabel)}</text>'
        f'<text x="18" y="{_TOP + ph / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {_TOP + ph / 2:.0f})">{escape(fig.ylabel)}</text>'
    )

    legend = []
    for h in fig.hlines:
        dash = _DASH[h.style]
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(
            f'<line x1="{_LEFT}" y1="{_fmt(py(h.y))}" x2="{_LEFT + pw}" y2="{_fmt(py(h.y))}" '
            f'stroke="{h.color}"{extra}/>'
        )
        legend.append(("line", h.style, h.color, h.name))
    for s in fig.series:
        x = np.asarray(s.x, float)
        y = np.asarray(s.y, float)
        keep = np.isfinite(x) & np.isfinite(y)
        if s.err is not None:
            e = np.asarray(s.err, float)
            for xi, yi, ei in zip(x[keep], y[keep], e[keep]):
                out.append(
                    f'<line x1="{_fmt(px(xi))}" y1="{_fmt(py(yi - ei))}" x2="{_fmt(px(xi))}" '
                    f'y2="{_fmt(py(yi + ei))}" stroke="{s.color}"/>'
                )
        if s.kind == "line":
            pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x[keep], y[keep]))
            dash = _DASH[s.style]
            extra = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{s.color}" stroke-width="1.5"{extra}/>')
        else:
            fill = s.color if s.kind == "points" else "#ffffff"
            for a, b in zip(x[keep], y[keep]):
                out.append(
                    f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="3.5" fill="{fill}" stroke="{s.color}"/>'
                )
        legend.append((s.kind, s.style, s.color, s.name))

    lx = _LEFT + pw + 12
    for i, (kind, style, color, name) in enumerate(legend):
        ly = _TOP + 12 + 18 * i
        if kind == "line":
            dash = _DASH[style]
            extra = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="1.5"{extra}/>')
        else:
            fill = color if kind == "points" else "#ffffff"
            out.append(f'<circle cx="{lx + 12}" cy="{ly}" r="3.5" fill="{fill}" stroke="{color}"/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(fig: Figure, path: Path | str) -> Path:
    path = Path(path)
    path.write_text(render(fig), encoding="utf-8")
    return path
