"""Minimal static SVG charts, written directly (no plotting dependency).

Output is deterministic: identical inputs give byte-identical files, so
report regeneration is idempotent.  Only what the reports need: log2-x line
charts with error bars, a dashed reference line, and a panel grid.
"""

import math
from typing import Optional, Sequence

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


class Axes:
    """Maps data coordinates into one SVG viewport rectangle."""

    def __init__(self, x0, y0, width, height, xlim, ylim, log2_x=False):
        self.x0, self.y0 = x0, y0
        self.w, self.h = width, height
        self.xlim, self.ylim = xlim, ylim
        self.log2_x = log2_x

    def _tx(self, x):
        lo, hi = self.xlim
        if self.log2_x:
            x, lo, hi = math.log2(x), math.log2(lo), math.log2(hi)
        return self.x0 + (x - lo) / (hi - lo) * self.w

    def _ty(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (y - lo) / (hi - lo) * self.h

    def frame(self, parts, title, xlabel, ylabel, xticks, yticks):
        parts.append(
            f'<rect x="{self.x0}" y="{self.y0}" width="{self.w}" height="{self.h}" '
            'fill="none" stroke="#444" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{self.x0 + self.w / 2:.1f}" y="{self.y0 - 8}" '
            'text-anchor="middle" font-size="13" font-weight="bold" '
            f'font-family="sans-serif">{title}</text>'
        )
        for xt in xticks:
            px = self._tx(xt)
            parts.append(
                f'<line x1="{px:.1f}" y1="{self.y0 + self.h}" x2="{px:.1f}" '
                f'y2="{self.y0 + self.h + 4}" stroke="#444"/>'
            )
            parts.append(
                f'<text x="{px:.1f}" y="{self.y0 + self.h + 16}" text-anchor="middle" '
                f'font-size="10" font-family="sans-serif">{_fmt(xt)}</text>'
            )
        for yt in yticks:
            py = self._ty(yt)
            parts.append(
                f'<line x1="{self.x0 - 4}" y1="{py:.1f}" x2="{self.x0}" y2="{py:.1f}" '
                'stroke="#444"/>'
            )
            parts.append(
                f'<text x="{self.x0 - 7}" y="{py + 3:.1f}" text-anchor="end" '
                f'font-size="10" font-family="sans-serif">{_fmt(yt)}</text>'
            )
        parts.append(
            f'<text x="{self.x0 + self.w / 2:.1f}" y="{self.y0 + self.h + 32}" '
            f'text-anchor="middle" font-size="11" font-family="sans-serif">{xlabel}</text>'
        )
        parts.append(
            f'<text x="{self.x0 - 38}" y="{self.y0 + self.h / 2:.1f}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif" '
            f'transform="rotate(-90 {self.x0 - 38} {self.y0 + self.h / 2:.1f})">{ylabel}</text>'
        )

    def hline(self, parts, y, color="#888"):
        py = self._ty(y)
        parts.append(
            f'<line x1="{self.x0}" y1="{py:.1f}" x2="{self.x0 + self.w}" y2="{py:.1f}" '
            f'stroke="{color}" stroke-dasharray="6,4" stroke-width="1"/>'
        )

    def series(self, parts, xs, ys, color, errs=None):
        pts = " ".join(f"{self._tx(x):.1f},{self._ty(y):.1f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        for i, (x, y) in enumerate(zip(xs, ys)):
            px, py = self._tx(x), self._ty(y)
            parts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="2.6" fill="{color}"/>')
            if errs is not None and errs[i] > 0:
                y1, y2 = self._ty(y - errs[i]), self._ty(y + errs[i])
                parts.append(
                    f'<line x1="{px:.1f}" y1="{y1:.1f}" x2="{px:.1f}" y2="{y2:.1f}" '
                    f'stroke="{color}" stroke-width="1"/>'
                )


def _legend(parts, entries, x, y):
    for i, (label, color) in enumerate(entries):
        yy = y + i * 15
        parts.append(
            f'<line x1="{x}" y1="{yy}" x2="{x + 18}" y2="{yy}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{x + 23}" y="{yy + 3.5}" font-size="10" '
            f'font-family="sans-serif">{label}</text>'
        )


def line_chart(series: dict, title: str, xlabel: str, ylabel: str,
               fair_share: Optional[float] = None,
               ylim=(0.0, 1.0), log2_x: bool = True,
               width: int = 520, height: int = 360) -> str:
    """One chart; ``series`` maps label -> (xs, ys) or (xs, ys, errs)."""
    all_x = sorted({x for vals in series.values() for x in vals[0]})
    xlim = (min(all_x), max(all_x)) if len(all_x) > 1 else (all_x[0] * 0.5, all_x[0] * 2)
    ax = Axes(70, 40, width - 100, height - 100, xlim, ylim, log2_x=log2_x)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    yticks = [ylim[0] + k * (ylim[1] - ylim[0]) / 5 for k in range(6)]
    ax.frame(parts, title, xlabel, ylabel, all_x, yticks)
    if fair_share is not None:
        ax.hline(parts, fair_share)
    entries = []
    for i, (label, vals) in enumerate(sorted(series.items())):
        color = PALETTE[i % len(PALETTE)]
        errs = vals[2] if len(vals) > 2 else None
        ax.series(parts, vals[0], vals[1], color, errs)
        entries.append((label, color))
    _legend(parts, entries, 80, 52)
    parts.append("</svg>")
    return "\n".join(parts)


def panel_grid(panels: Sequence[dict], title: str, xlabel: str,
               panel_w: int = 300, panel_h: int = 280) -> str:
    """Side-by-side panels; each panel dict: title, ylabel, series, ylim, fair_share."""
    n = len(panels)
    width = n * panel_w + 40
    height = panel_h + 70
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14" '
        f'font-weight="bold" font-family="sans-serif">{title}</text>',
    ]
    legend_entries = []
    for k, panel in enumerate(panels):
        series = panel["series"]
        ylim = panel.get("ylim", (0.0, 1.0))
        all_x = sorted({x for vals in series.values() for x in vals[0]})
        if not all_x:
            continue
        xlim = (min(all_x), max(all_x)) if len(all_x) > 1 else (all_x[0] * 0.5, all_x[0] * 2)
        ax = Axes(60 + k * panel_w, 46, panel_w - 70, panel_h - 80, xlim, ylim, log2_x=True)
        yticks = [ylim[0] + j * (ylim[1] - ylim[0]) / 4 for j in range(5)]
        ax.frame(parts, panel["title"], xlabel, panel.get("ylabel", ""), all_x, yticks)
        if panel.get("fair_share") is not None:
            ax.hline(parts, panel["fair_share"])
        for i, (label, vals) in enumerate(sorted(series.items())):
            color = PALETTE[i % len(PALETTE)]
            errs = vals[2] if len(vals) > 2 else None
            ax.series(parts, vals[0], vals[1], color, errs)
            if k == 0:
                legend_entries.append((label, color))
    _legend(parts, legend_entries, 66, height - 16)
    parts.append("</svg>")
    return "\n".join(parts)
