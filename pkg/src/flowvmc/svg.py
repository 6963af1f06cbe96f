"""Minimal SVG line, box and heat-map plots (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = (60, 20, 30, 50)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Frame:
    def __init__(self, xlim, ylim, logx=False, logy=False):
        self.logx, self.logy = logx, logy
        self.x0, self.x1 = self._lim(xlim, logx)
        self.y0, self.y1 = self._lim(ylim, logy)

    @staticmethod
    def _lim(lim, log):
        lo, hi = (math.log10(v) for v in lim) if log else lim
        if hi <= lo:
            pad = abs(lo) * 0.05 or 1.0
            lo, hi = lo - pad, hi + pad
        return lo, hi

    def px(self, x):
        x = math.log10(x) if self.logx else x
        left, right = MARGIN[0], WIDTH - MARGIN[1]
        return left + (x - self.x0) / (self.x1 - self.x0) * (right - left)

    def py(self, y):
        y = math.log10(y) if self.logy else y
        top, bottom = MARGIN[2], HEIGHT - MARGIN[3]
        return bottom - (y - self.y0) / (self.y1 - self.y0) * (bottom - top)


def _header(title: str, xlabel: str, ylabel: str, frame: _Frame) -> list[str]:
    left, right = MARGIN[0], WIDTH - MARGIN[1]
    top, bottom = MARGIN[2], HEIGHT - MARGIN[3]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{(left + right) / 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="15" y="{(top + bottom) / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {(top + bottom) / 2})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = frame.x0 + frac * (frame.x1 - frame.x0)
        yv = frame.y0 + frac * (frame.y1 - frame.y0)
        xs = 10**xv if frame.logx else xv
        ys = 10**yv if frame.logy else yv
        out.append(f'<text x="{_fmt(frame.px(xs))}" y="{bottom + 14}" text-anchor="middle" font-size="10">{xs:.3g}</text>')
        out.append(f'<text x="{left - 4}" y="{_fmt(frame.py(ys))}" text-anchor="end" font-size="10">{ys:.3g}</text>')
    return out


def _finite_limits(values, log: bool):
    v = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in values])
    v = v[np.isfinite(v)]
    if log:
        v = v[v > 0]
    if v.size == 0:
        return (1.0, 10.0) if log else (0.0, 1.0)
    return float(v.min()), float(v.max())


def line_plot(series: dict, title: str = "", xlabel: str = "", ylabel: str = "", logx: bool = False, logy: bool = False) -> str:
    """One ``<polyline>`` per entry of ``series`` (name -> (x, y))."""
    if not series:
        raise ValueError("no series to plot")
    xs = [np.asarray(x, dtype=np.float64) for x, _ in series.values()]
    ys = [np.asarray(y, dtype=np.float64) for _, y in series.values()]
    frame = _Frame(_finite_limits(xs, logx), _finite_limits(ys, logy), logx, logy)
    out = _header(title, xlabel, ylabel, frame)
    for k, (name, x, y) in enumerate(zip(series, xs, ys)):
        keep = np.isfinite(x) & np.isfinite(y)
        if logx:
            keep &= x > 0
        if logy:
            keep &= y > 0
        pts = " ".join(f"{_fmt(frame.px(a))},{_fmt(frame.py(b))}" for a, b in zip(x[keep], y[keep]))
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<polyline data-series="{escape(str(name))}" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(
            f'<text x="{WIDTH - MARGIN[1] - 4}" y="{MARGIN[2] + 14 * (k + 1)}" text-anchor="end" '
            f'font-size="11" fill="{color}">{escape(str(name))}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def box_plot(groups: dict, title: str = "", ylabel: str = "") -> str:
    """Box-and-whisker glyphs (rect + lines) for each named group of values."""
    if not groups:
        raise ValueError("no groups to plot")
    data = [np.asarray(v, dtype=np.float64) for v in groups.values()]
    frame = _Frame((0.0, float(len(data))), _finite_limits(data, False))
    out = _header(title, "", ylabel, frame)
    for k, (name, v) in enumerate(zip(groups, data)):
        q0, q1, q2, q3, q4 = np.percentile(v, [0, 25, 50, 75, 100])
        cx = frame.px(k + 0.5)
        half = 0.25 * (frame.px(1) - frame.px(0))
        color = PALETTE[k % len(PALETTE)]
        out.append(
            f'<rect x="{_fmt(cx - half)}" y="{_fmt(frame.py(q3))}" width="{_fmt(2 * half)}" '
            f'height="{_fmt(max(frame.py(q1) - frame.py(q3), 0.5))}" fill="none" stroke="{color}"/>'
        )
        out.append(f'<line x1="{_fmt(cx - half)}" y1="{_fmt(frame.py(q2))}" x2="{_fmt(cx + half)}" y2="{_fmt(frame.py(q2))}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<line x1="{_fmt(cx)}" y1="{_fmt(frame.py(q0))}" x2="{_fmt(cx)}" y2="{_fmt(frame.py(q1))}" stroke="{color}"/>')
        out.append(f'<line x1="{_fmt(cx)}" y1="{_fmt(frame.py(q3))}" x2="{_fmt(cx)}" y2="{_fmt(frame.py(q4))}" stroke="{color}"/>')
        out.append(f'<text x="{_fmt(cx)}" y="{HEIGHT - MARGIN[3] + 14}" text-anchor="middle" font-size="11">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(counts: np.ndarray, xedges, yedges, title: str = "", xlabel: str = "x1", ylabel: str = "x2") -> str:
    """2-D histogram as a grid of shaded rects (darker = more mass)."""
    counts = np.asarray(counts, dtype=np.float64)
    frame = _Frame((float(xedges[0]), float(xedges[-1])), (float(yedges[0]), float(yedges[-1])))
    out = _header(title, xlabel, ylabel, frame)
    top = counts.max() or 1.0
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            if counts[i, j] <= 0:
                continue
            shade = int(255 * (1 - counts[i, j] / top))
            x0, x1 = frame.px(xedges[i]), frame.px(xedges[i + 1])
            y0, y1 = frame.py(yedges[j + 1]), frame.py(yedges[j])
            out.append(
                f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" height="{_fmt(y1 - y0)}" '
                f'fill="rgb({shade},{shade},255)"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"
