"""Error versus relative compression, as a standalone SVG (log-scaled x axis)."""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Sequence
from xml.sax.saxutils import escape

from .harness import RunRecord

__all__ = ["svg_curve"]

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 30, 55
COLORS = {
    "ours": "#d62728",
    "lossless": "#000000",
    "f16": "#7f7f7f",
    "quant": "#1f77b4",
    "pca": "#2ca02c",
}


def _family(method: str) -> str:
    return method.split("_")[0]


def _curves(records: Sequence[RunRecord]):
    groups = defaultdict(list)
    for r in records:
        if math.isnan(r.relative_compression) or math.isnan(r.val_error) or r.relative_compression <= 0:
            continue
        groups[_family(r.method)].append(r)
    out = {}
    for name, rows in groups.items():
        # average over seeds at identical settings
        by_setting = defaultdict(list)
        for r in rows:
            by_setting[(r.method, r.lam)].append(r)
        pts = [
            (sum(r.relative_compression for r in rs) / len(rs), sum(r.val_error for r in rs) / len(rs))
            for rs in by_setting.values()
        ]
        out[name] = sorted(pts)
    return out


def svg_curve(records: Sequence[RunRecord], title: str = "validation error vs relative compression") -> str:
    curves = _curves(records)
    xs = [x for pts in curves.values() for x, _ in pts]
    ys = [y for pts in curves.values() for _, y in pts]
    if not xs:
        xs, ys = [0.01, 1.0], [0.0, 100.0]
    lx_min = math.floor(math.log10(min(xs)))
    lx_max = max(math.ceil(math.log10(max(xs))), lx_min + 1)
    y_max = max(5.0, math.ceil(max(ys) / 5.0) * 5.0)
    plot_w = WIDTH - LEFT - RIGHT
    plot_h = HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (math.log10(x) - lx_min) / (lx_max - lx_min) * plot_w

    def py(y):
        return TOP + plot_h - y / y_max * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>',
    ]
    for e in range(lx_min, lx_max + 1):
        x = px(10.0**e)
        parts.append(f'<line x1="{x:.1f}" y1="{TOP}" x2="{x:.1f}" y2="{TOP + plot_h}" stroke="#ddd"/>')
        parts.append(f'<text x="{x:.1f}" y="{TOP + plot_h + 16}" text-anchor="middle">{10.0**e:g}</text>')
    for i in range(6):
        y = y_max * i / 5
        parts.append(f'<line x1="{LEFT}" y1="{py(y):.1f}" x2="{LEFT + plot_w}" y2="{py(y):.1f}" stroke="#eee"/>')
        parts.append(f'<text x="{LEFT - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:g}</text>')
    parts.append(f'<text x="{LEFT + plot_w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">relative compression (size / lossless size)</text>')
    parts.append(f'<text transform="translate(16 {TOP + plot_h / 2:.1f}) rotate(-90)" text-anchor="middle">validation error (%)</text>')
    for row, (name, pts) in enumerate(sorted(curves.items())):
        color = COLORS.get(name, "#9467bd")
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        if len(pts) > 1:
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
        ly = TOP + 14 + 18 * row
        lx = LEFT + plot_w + 14
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 26}" y="{ly}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
