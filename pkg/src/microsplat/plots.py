"""Minimal SVG line charts for training curves."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape


def line_chart_svg(xs, ys, title: str, xlabel: str, ylabel: str, width: int = 640, height: int = 360) -> str:
    pts = [(float(x), float(y)) for x, y in zip(xs, ys) if math.isfinite(float(y))]
    left, right, top, bottom = 64, 16, 32, 48
    pw, ph = width - left - right, height - top - bottom
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        parts.append(f'<text x="{sx(fx):.1f}" y="{top + ph + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{fx:.4g}</text>')
        parts.append(f'<text x="{left - 6}" y="{sy(fy) + 3:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{fy:.4g}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    parts.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12" transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    if poly:
        parts.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{poly}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
