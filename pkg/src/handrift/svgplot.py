"""Minimal native SVG output: line charts and state timelines, no deps."""

from __future__ import annotations

import numpy as np

from .physics import STATE_NAMES

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
STATE_COLORS = ("#4c72b0", "#55a868", "#c44e52", "#8172b2", "#b0b0b0")

W, H = 640, 320
MARGIN = 48


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_chart(series: list, title: str = "", x_label: str = "frame", y_label: str = "") -> str:
    """series: list of (name, values). Returns an SVG document string."""
    all_y = np.concatenate([np.asarray(v, dtype=float) for _, v in series])
    y_min, y_max = float(all_y.min()), float(all_y.max())
    if y_max - y_min < 1e-12:
        y_max = y_min + 1.0
    n = max(len(v) for _, v in series)
    px = lambda i: MARGIN + (W - 2 * MARGIN) * (i / max(n - 1, 1))
    py = lambda v: H - MARGIN - (H - 2 * MARGIN) * ((v - y_min) / (y_max - y_min))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W/2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{MARGIN}" y1="{H-MARGIN}" x2="{W-MARGIN}" y2="{H-MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{H-MARGIN}" stroke="black"/>',
        f'<text x="{W/2}" y="{H-12}" text-anchor="middle" font-size="11">{x_label}</text>',
        f'<text x="14" y="{H/2}" font-size="11" transform="rotate(-90 14 {H/2})" text-anchor="middle">{y_label}</text>',
        f'<text x="{MARGIN-4}" y="{H-MARGIN+4}" text-anchor="end" font-size="10">{_fmt(y_min)}</text>',
        f'<text x="{MARGIN-4}" y="{MARGIN+4}" text-anchor="end" font-size="10">{_fmt(y_max)}</text>',
    ]
    for si, (name, vals) in enumerate(series):
        vals = np.asarray(vals, dtype=float)
        color = PALETTE[si % len(PALETTE)]
        pts = " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(vals))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(
            f'<text x="{W-MARGIN}" y="{MARGIN + 14*si}" text-anchor="end" font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def state_timeline(labels, title: str = "motion states") -> str:
    labels = np.asarray(labels, dtype=int)
    T = labels.shape[0]
    bar_y, bar_h = 90, 60
    cell = (W - 2 * MARGIN) / T
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="220" viewBox="0 0 {W} 220">',
        f'<rect width="{W}" height="220" fill="white"/>',
        f'<text x="{W/2}" y="24" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for t, lab in enumerate(labels):
        x = MARGIN + t * cell
        parts.append(
            f'<rect x="{x:.2f}" y="{bar_y}" width="{cell:.2f}" height="{bar_h}" '
            f'fill="{STATE_COLORS[lab % len(STATE_COLORS)]}" stroke="white" stroke-width="0.5"/>'
        )
    for i, name in enumerate(STATE_NAMES):
        x = MARGIN + i * 110
        parts.append(f'<rect x="{x}" y="180" width="12" height="12" fill="{STATE_COLORS[i]}"/>')
        parts.append(f'<text x="{x+16}" y="190" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
