"""Tiny dependency-free SVG emission: line charts and scatters with axes.

Static output only; series colors cycle through a fixed palette so repeated
runs produce identical bytes.
"""

from __future__ import annotations

import math
from pathlib import Path

PALETTE = ("#4472c4", "#ed7d31", "#70ad47", "#9e480e", "#636363", "#997300")

_MARGIN = 56
_WIDTH = 640
_HEIGHT = 420


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return [0.0, 1.0]
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if raw / mag <= m:
            step = m * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks or [lo, hi]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel, log_y=False):
        self.xlim, self.ylim, self.log_y = xlim, ylim, log_y
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
            f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
            f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
            f'<text x="{_WIDTH / 2}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>',
            f'<text x="{_WIDTH / 2}" y="{_HEIGHT - 8}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{xlabel}</text>',
            f'<text x="14" y="{_HEIGHT / 2}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 14 {_HEIGHT / 2})">{ylabel}</text>',
        ]
        self._axes()

    def x_px(self, x):
        lo, hi = self.xlim
        frac = (x - lo) / (hi - lo) if hi > lo else 0.5
        return _MARGIN + frac * (_WIDTH - 2 * _MARGIN)

    def y_px(self, y):
        lo, hi = self.ylim
        if self.log_y:
            y, lo, hi = math.log10(max(y, 1e-300)), math.log10(lo), math.log10(hi)
        frac = (y - lo) / (hi - lo) if hi > lo else 0.5
        return _HEIGHT - _MARGIN - frac * (_HEIGHT - 2 * _MARGIN)

    def _axes(self):
        x0, x1 = _MARGIN, _WIDTH - _MARGIN
        y0, y1 = _HEIGHT - _MARGIN, _MARGIN
        self.parts.append(
            f'<path d="M {x0} {y1} L {x0} {y0} L {x1} {y0}" stroke="black" '
            f'fill="none" stroke-width="1"/>'
        )
        for t in _nice_ticks(*self.xlim):
            if self.xlim[0] <= t <= self.xlim[1]:
                px = self.x_px(t)
                self.parts.append(
                    f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y0 + 4}" stroke="black"/>'
                    f'<text x="{px:.1f}" y="{y0 + 16}" text-anchor="middle" '
                    f'font-family="sans-serif" font-size="10">{_fmt(t)}</text>'
                )
        ticks = (
            [10**e for e in range(
                math.floor(math.log10(self.ylim[0])), math.ceil(math.log10(self.ylim[1])) + 1
            )]
            if self.log_y
            else _nice_ticks(*self.ylim)
        )
        for t in ticks:
            if self.ylim[0] <= t <= self.ylim[1]:
                py = self.y_px(t)
                self.parts.append(
                    f'<line x1="{x0 - 4}" y1="{py:.1f}" x2="{x0}" y2="{py:.1f}" stroke="black"/>'
                    f'<text x="{x0 - 6}" y="{py + 3:.1f}" text-anchor="end" '
                    f'font-family="sans-serif" font-size="10">{_fmt(t)}</text>'
                )

    def legend(self, names):
        for k, name in enumerate(names):
            y = _MARGIN + 14 * k
            self.parts.append(
                f'<rect x="{_WIDTH - _MARGIN - 130}" y="{y - 8}" width="10" height="10" '
                f'fill="{PALETTE[k % len(PALETTE)]}"/>'
                f'<text x="{_WIDTH - _MARGIN - 115}" y="{y + 1}" '
                f'font-family="sans-serif" font-size="11">{name}</text>'
            )

    def finish(self) -> str:
        return "\n".join(self.parts + ["</svg>"])


def _limits(values, pad=0.05):
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return (0.0, 1.0)
    lo, hi = min(vals), max(vals)
    if hi == lo:
        return (lo - 1.0, hi + 1.0)
    span = hi - lo
    return (lo - pad * span, hi + pad * span)


def line_plot(path, series, title="", xlabel="", ylabel="", log_y=False) -> None:
    """series: list of (name, xs, ys)."""
    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys if math.isfinite(y)]
    ylim = (min(all_y), max(all_y)) if log_y else _limits(all_y)
    if log_y:
        ylim = (max(min(all_y), 1e-12), max(all_y))
    canvas = _Canvas(_limits(all_x, 0.02), ylim, title, xlabel, ylabel, log_y)
    for k, (name, xs, ys) in enumerate(series):
        pts = " ".join(
            f"{canvas.x_px(x):.1f},{canvas.y_px(y):.1f}"
            for x, y in zip(xs, ys)
            if math.isfinite(y)
        )
        canvas.parts.append(
            f'<polyline points="{pts}" fill="none" '
            f'stroke="{PALETTE[k % len(PALETTE)]}" stroke-width="1.5"/>'
        )
    canvas.legend([name for name, _, _ in series])
    Path(path).write_text(canvas.finish(), encoding="utf-8")


def scatter_plot(path, series, title="", xlabel="x", ylabel="y", max_points=4000) -> None:
    """series: list of (name, points array of shape (n, 2))."""
    xs = [float(p[0]) for _, pts in series for p in pts[:max_points]]
    ys = [float(p[1]) for _, pts in series for p in pts[:max_points]]
    canvas = _Canvas(_limits(xs), _limits(ys), title, xlabel, ylabel)
    for k, (name, pts) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        for p in pts[:max_points]:
            canvas.parts.append(
                f'<circle cx="{canvas.x_px(float(p[0])):.1f}" '
                f'cy="{canvas.y_px(float(p[1])):.1f}" r="1.4" fill="{color}" '
                f'fill-opacity="0.5"/>'
            )
    canvas.legend([name for name, _ in series])
    Path(path).write_text(canvas.finish(), encoding="utf-8")
