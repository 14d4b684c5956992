"""Standalone SVG 1.1 charts.

Every chart is plain data plus a ``to_svg`` method, and all numbers are
written with fixed precision so identical inputs give identical bytes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigError, DataError

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
NOISE_COLOR = "#c8c8c8"
FONT = 'font-family="Helvetica, Arial, sans-serif"'


def color_for(group: int) -> str:
    return NOISE_COLOR if group < 0 else PALETTE[group % len(PALETTE)]


def _num(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _label(v: float) -> str:
    s = f"{v:.4g}"
    return "0" if s in ("-0", "0") else s


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise DataError("axis limits must be finite")
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9)
    ticks = []
    i = first
    while i * step <= hi + 1e-9 * step:
        ticks.append(round(i * step, 12))
        i += 1
    return ticks


def _padded(lo: float, hi: float, frac: float = 0.05) -> tuple[float, float]:
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    pad = (hi - lo) * frac
    return lo - pad, hi + pad


class _Canvas:
    def __init__(self, width: int, height: int, title: str):
        self.width = width
        self.height = height
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        ]
        if title:
            self.text(width / 2, 22, title, size=15, anchor="middle", weight="bold")

    def text(self, x, y, s, size=11, anchor="start", weight="normal", rotate=None,
             fill="#222222"):
        rot = f' transform="rotate({rotate} {_num(x)} {_num(y)})"' if rotate is not None else ""
        self.parts.append(
            f'<text x="{_num(x)}" y="{_num(y)}" {FONT} font-size="{size}" '
            f'text-anchor="{anchor}" font-weight="{weight}" fill="{fill}"{rot}>'
            f"{escape(str(s))}</text>")

    def line(self, x1, y1, x2, y2, stroke="#222222", width=1.0, dash=None, marker=False):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        if marker:
            extra += ' marker-end="url(#arrow)"'
        self.parts.append(
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
            f'stroke="{stroke}" stroke-width="{_num(width)}"{extra}/>')

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.parts.append(
            f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(max(w, 0))}" '
            f'height="{_num(max(h, 0))}" fill="{fill}" stroke="{stroke}"/>')

    def circle(self, x, y, r, fill, opacity=0.8):
        self.parts.append(
            f'<circle cx="{_num(x)}" cy="{_num(y)}" r="{_num(r)}" fill="{fill}" '
            f'fill-opacity="{opacity}"/>')

    def polyline(self, pts, stroke, width=2.0):
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_num(width)}" stroke-linejoin="round"/>')

    def arrow_marker(self):
        self.parts.append(
            '<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" '
            'markerWidth="6" markerHeight="6" orient="auto-start-reverse">'
            '<path d="M 0 0 L 10 5 L 0 10 z" fill="#555555"/></marker></defs>')

    def legend(self, x, y, entries):
        for i, (name, color) in enumerate(entries):
            yy = y + 16 * i
            self.rect(x, yy - 9, 10, 10, color)
            self.text(x + 15, yy, name, size=10)

    def finish(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Axes:
    """Linear data-to-pixel mapping with ticks and axis labels."""

    def __init__(self, canvas, left, top, right, bottom, xlim, ylim):
        self.c = canvas
        self.left, self.top, self.right, self.bottom = left, top, right, bottom
        self.xticks = nice_ticks(*xlim)
        self.yticks = nice_ticks(*ylim)
        self.x0 = min(xlim[0], self.xticks[0])
        self.x1 = max(xlim[1], self.xticks[-1])
        self.y0 = min(ylim[0], self.yticks[0])
        self.y1 = max(ylim[1], self.yticks[-1])

    def px(self, x):
        return self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def py(self, y):
        return self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)

    def draw(self, xlabel="", ylabel="", grid=True):
        c = self.c
        for t in self.xticks:
            x = self.px(t)
            if grid:
                c.line(x, self.top, x, self.bottom, stroke="#eeeeee")
            c.line(x, self.bottom, x, self.bottom + 4)
            c.text(x, self.bottom + 16, _label(t), size=10, anchor="middle")
        for t in self.yticks:
            y = self.py(t)
            if grid:
                c.line(self.left, y, self.right, y, stroke="#eeeeee")
            c.line(self.left - 4, y, self.left, y)
            c.text(self.left - 7, y + 3, _label(t), size=10, anchor="end")
        c.line(self.left, self.bottom, self.right, self.bottom)
        c.line(self.left, self.top, self.left, self.bottom)
        if xlabel:
            c.text((self.left + self.right) / 2, self.bottom + 34, xlabel, size=12,
                   anchor="middle")
        if ylabel:
            c.text(self.left - 42, (self.top + self.bottom) / 2, ylabel, size=12,
                   anchor="middle", rotate=-90)


def _finite(*arrays):
    for a in arrays:
        if a is not None and np.size(a) and not np.all(np.isfinite(np.asarray(a, dtype=float))):
            raise DataError("chart data must be finite")


@dataclass(eq=False)
class ScatterPlot:
    points: np.ndarray
    groups: Optional[np.ndarray] = None
    group_names: Optional[dict] = None
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""

    def to_svg(self) -> str:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        _finite(pts)
        groups = (np.zeros(len(pts), dtype=np.int64) if self.groups is None
                  else np.asarray(self.groups, dtype=np.int64))
        c = _Canvas(640, 480, self.title)
        if len(pts):
            xlim = _padded(pts[:, 0].min(), pts[:, 0].max())
            ylim = _padded(pts[:, 1].min(), pts[:, 1].max())
        else:
            xlim, ylim = (0.0, 1.0), (0.0, 1.0)
        ax = _Axes(c, 70, 40, 520, 420, xlim, ylim)
        ax.draw(self.xlabel, self.ylabel)
        # noise first so clustered points sit on top
        for i in np.lexsort((np.arange(len(pts)), groups >= 0)):
            c.circle(ax.px(pts[i, 0]), ax.py(pts[i, 1]), 2.5, color_for(int(groups[i])))
        if self.groups is not None and len(pts):
            names = self.group_names or {}
            entries = [(names.get(int(g), "noise" if g < 0 else str(int(g))), color_for(int(g)))
                       for g in sorted(set(int(v) for v in groups))]
            c.legend(535, 60, entries)
        return c.finish()


@dataclass(eq=False)
class BarChart:
    """Horizontal bars per feature, stacked across classes."""

    values: np.ndarray  # (p, k), non-negative
    feature_names: Sequence[str]
    class_names: Sequence[str]
    title: str = ""
    xlabel: str = "mean |SHAP value|"

    def to_svg(self) -> str:
        v = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        _finite(v)
        if np.any(v < 0):
            raise DataError("bar values must be non-negative")
        order = np.argsort(-v.sum(axis=1), kind="stable")
        p = len(order)
        height = 90 + 22 * max(p, 1)
        c = _Canvas(720, height, self.title)
        total = float(v.sum(axis=1).max()) if p else 1.0
        ax = _Axes(c, 170, 40, 560, 40 + 22 * max(p, 1), (0.0, total or 1.0), (0.0, 1.0))
        for t in ax.xticks:
            x = ax.px(t)
            c.line(x, ax.top, x, ax.bottom, stroke="#eeeeee")
            c.text(x, ax.bottom + 16, _label(t), size=10, anchor="middle")
        c.line(ax.left, ax.bottom, ax.right, ax.bottom)
        c.text((ax.left + ax.right) / 2, ax.bottom + 34, self.xlabel, size=12, anchor="middle")
        for row, i in enumerate(order):
            y = ax.top + 22 * row + 4
            c.text(ax.left - 6, y + 11, self.feature_names[i], size=10, anchor="end")
            start = 0.0
            for cls in range(v.shape[1]):
                x0, x1 = ax.px(start), ax.px(start + v[i, cls])
                c.rect(x0, y, x1 - x0, 15, color_for(cls))
                start += v[i, cls]
        c.legend(575, 60, [(n, color_for(j)) for j, n in enumerate(self.class_names)])
        return c.finish()


def _diverging(t: float) -> str:
    """Blue-white-red colour for ``t`` in [-1, 1]."""
    t = max(-1.0, min(1.0, t))
    if t >= 0:
        r, g, b = 255, int(round(255 * (1 - t * 0.85))), int(round(255 * (1 - t * 0.85)))
    else:
        s = -t
        r, g, b = int(round(255 * (1 - s * 0.85))), int(round(255 * (1 - s * 0.6))), 255
    return f"#{r:02x}{g:02x}{b:02x}"


@dataclass(eq=False)
class Heatmap:
    matrix: np.ndarray  # rows x columns
    row_labels: Sequence[str]
    col_labels: Sequence[str]
    title: str = ""

    def to_svg(self) -> str:
        m = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        _finite(m)
        rows, cols = m.shape
        cell_w, cell_h = 44, 30
        left, top = 110, 110
        c = _Canvas(left + cell_w * cols + 40, top + cell_h * rows + 40, self.title)
        scale = float(np.max(np.abs(m))) if m.size else 1.0
        scale = scale or 1.0
        for j, name in enumerate(self.col_labels):
            x = left + cell_w * (j + 0.5)
            c.text(x, top - 8, name, size=10, anchor="start", rotate=-55)
        for i in range(rows):
            y = top + cell_h * i
            c.text(left - 8, y + cell_h / 2 + 4, self.row_labels[i], size=11, anchor="end")
            for j in range(cols):
                x = left + cell_w * j
                c.rect(x, y, cell_w, cell_h, _diverging(m[i, j] / scale), stroke="#ffffff")
                c.text(x + cell_w / 2, y + cell_h / 2 + 4, f"{m[i, j]:.2f}", size=9,
                       anchor="middle")
        return c.finish()


@dataclass(eq=False)
class ClassicWaterfall:
    """Bars whose base sits at the end of the previous bar, from E[f(X)] to f(x)."""

    base: float
    deltas: Sequence[float]
    names: Sequence[str]
    title: str = ""

    def bar_ends(self) -> list[float]:
        ends = [float(self.base)]
        for d in self.deltas:
            ends.append(ends[-1] + float(d))
        return ends

    def to_svg(self) -> str:
        _finite(np.asarray(self.deltas, dtype=float), np.asarray([self.base], dtype=float))
        ends = self.bar_ends()
        m = len(self.deltas)
        c = _Canvas(720, 110 + 26 * max(m, 1), self.title)
        ax = _Axes(c, 170, 40, 640, 40 + 26 * max(m, 1), _padded(min(ends), max(ends)),
                   (0.0, 1.0))
        for t in ax.xticks:
            x = ax.px(t)
            c.line(x, ax.top, x, ax.bottom, stroke="#eeeeee")
            c.text(x, ax.bottom + 16, _label(t), size=10, anchor="middle")
        c.line(ax.left, ax.bottom, ax.right, ax.bottom)
        bx = ax.px(ends[0])
        c.line(bx, ax.top, bx, ax.bottom, stroke="#888888", dash="4,3")
        c.text(bx, ax.bottom + 34, f"E[f(X)] = {_label(ends[0])}", size=11, anchor="middle")
        fx = ax.px(ends[-1])
        c.line(fx, ax.top - 6, fx, ax.bottom, stroke="#888888", dash="4,3")
        c.text(fx, ax.top - 10, f"f(x) = {_label(ends[-1])}", size=11, anchor="middle")
        for j in range(m):
            y = ax.top + 26 * j + 5
            a, b = ends[j], ends[j + 1]
            color = PALETTE[3] if b >= a else PALETTE[0]
            c.rect(ax.px(min(a, b)), y, abs(ax.px(b) - ax.px(a)), 16, color)
            c.text(ax.left - 6, y + 12, self.names[j], size=10, anchor="end")
            sign = "+" if b >= a else "-"
            c.text(ax.px(max(a, b)) + 4, y + 12, f"{sign}{_label(abs(b - a))}", size=9)
        return c.finish()


@dataclass(eq=False)
class PathPlot:
    """Projected waterfall paths with segment labels and optional biplot arrows."""

    paths: list  # ProjectedPath
    title: str = ""
    class_names: Sequence[str] = ()
    label_segments: int = 3

    def to_svg(self) -> str:
        verts = [np.asarray(p.vertices2d, dtype=np.float64) for p in self.paths]
        _finite(*verts)
        c = _Canvas(720, 560, self.title)
        c.arrow_marker()
        allv = np.vstack(verts) if verts else np.zeros((1, 2))
        loadings = next((p.loadings for p in self.paths if p.loadings is not None), None)
        extent = max(float(np.max(np.abs(allv))), 1e-12)
        pts = allv
        if loadings is not None:
            pts = np.vstack([allv, np.asarray(loadings) * extent * 0.6])
        xlim = _padded(min(pts[:, 0].min(), 0.0), max(pts[:, 0].max(), 0.0))
        ylim = _padded(min(pts[:, 1].min(), 0.0), max(pts[:, 1].max(), 0.0))
        axis_labels = self.paths[0].axis_labels if self.paths else ("", "")
        ax = _Axes(c, 80, 40, 560, 500, xlim, ylim)
        ax.draw(*axis_labels)
        if loadings is not None:
            names = self.class_names or [f"Class {j}" for j in range(len(loadings))]
            for j, (lx, ly) in enumerate(np.asarray(loadings) * extent * 0.6):
                c.line(ax.px(0), ax.py(0), ax.px(lx), ax.py(ly), stroke="#555555",
                       dash="3,3", marker=True)
                c.text(ax.px(lx), ax.py(ly) - 5, names[j], size=10, anchor="middle",
                       fill="#555555")
        entries = []
        for idx, (p, v) in enumerate(zip(self.paths, verts)):
            group = int(p.tag) if isinstance(p.tag, (int, np.integer)) else idx
            color = color_for(group)
            c.polyline([(ax.px(x), ax.py(y)) for x, y in v], color)
            for j in range(1, min(self.label_segments, len(v) - 1) + 1):
                mx, my = (v[j - 1] + v[j]) / 2
                c.text(ax.px(mx) + 3, ax.py(my) - 3, p.segment_names[j - 1], size=8,
                       fill=color)
            ex, ey = v[-1]
            c.circle(ax.px(ex), ax.py(ey), 4, color, opacity=1.0)
            entries.append((f"Cluster {p.tag}" if p.tag is not None else f"Path {idx}", color))
        c.circle(ax.px(0), ax.py(0), 4, "#000000", opacity=1.0)
        c.text(ax.px(0) + 6, ax.py(0) + 12, "average prediction", size=9)
        c.legend(575, 60, entries)
        return c.finish()


def render_svg(artifact, out) -> str:
    """Write ``artifact.to_svg()`` to ``out``; returns the path written."""
    text = artifact.to_svg()
    out = os.fspath(out)
    try:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from exc
    return out
