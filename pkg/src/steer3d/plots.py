"""Dependency-free SVG line plots.

Numbers are written with fixed precision so identical inputs give
byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass(frozen=True)
class Series:
    label: str
    xy: np.ndarray  # (n, 2)
    dashed: bool = False


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    return f"{v:.4g}"


def line_plot(series: Sequence[Series], title: str = "", xlabel: str = "", ylabel: str = "",
              width: int = 640, height: int = 480, equal_aspect: bool = False) -> str:
    """Polylines on shared axes with min/max tick labels and a legend."""
    if not series:
        raise ValueError("nothing to plot")
    pts = np.concatenate([np.asarray(s.xy, dtype=np.float64).reshape(-1, 2) for s in series])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    margin_l, margin_r, margin_t, margin_b = 70, 20, 40, 50
    pw, ph = width - margin_l - margin_r, height - margin_t - margin_b
    sx, sy = pw / span[0], ph / span[1]
    if equal_aspect:
        sx = sy = min(sx, sy)

    def to_px(xy):
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return np.stack([margin_l + (xy[:, 0] - lo[0]) * sx, margin_t + ph - (xy[:, 1] - lo[1]) * sy], axis=1)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin_l}" y1="{margin_t + ph}" x2="{margin_l + pw}" y2="{margin_t + ph}" stroke="black"/>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" y2="{margin_t + ph}" stroke="black"/>',
        f'<text x="{margin_l}" y="{margin_t + ph + 16}" font-size="11">{_tick(lo[0])}</text>',
        f'<text x="{margin_l + pw}" y="{margin_t + ph + 16}" font-size="11" text-anchor="end">{_tick(hi[0])}</text>',
        f'<text x="{margin_l - 4}" y="{margin_t + ph}" font-size="11" text-anchor="end">{_tick(lo[1])}</text>',
        f'<text x="{margin_l - 4}" y="{margin_t + 10}" font-size="11" text-anchor="end">{_tick(hi[1])}</text>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="22" font-size="14" text-anchor="middle">{_escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{margin_l + pw / 2:.1f}" y="{height - 12}" font-size="12" text-anchor="middle">{_escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{margin_t + ph / 2:.1f}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 16 {margin_t + ph / 2:.1f})">{_escape(ylabel)}</text>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        px = to_px(s.xy)
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in px)
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{coords}"/>')
        ly = margin_t + 14 * i + 6
        out.append(f'<line x1="{width - 150}" y1="{ly}" x2="{width - 130}" y2="{ly}" stroke="{color}"{dash}/>')
        out.append(f'<text x="{width - 125}" y="{ly + 4}" font-size="11">{_escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
