"""Minimal self-contained SVG line charts (no renderer dependency).

Charts are built from panels; each panel holds series of (x, center,
low, high) points drawn as a center line over a shaded band. Output is
deterministic for identical input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2")

PANEL_W = 300
PANEL_H = 220
MARGIN_L = 52
MARGIN_R = 14
MARGIN_T = 34
MARGIN_B = 40


@dataclass
class Series:
    label: str
    xs: list[float]
    centers: list[float]
    lows: list[float] | None = None
    highs: list[float] | None = None


@dataclass
class Panel:
    title: str
    series: list[Series] = field(default_factory=list)
    x_label: str = "step"
    y_label: str = ""
    log10_x: bool = False


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") or "0"


def _tick_values(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / max(n - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12 * span:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _panel_svg(panel: Panel, ox: float, oy: float) -> list[str]:
    xs_all = [x for s in panel.series for x in s.xs]
    ys_all = []
    for s in panel.series:
        ys_all.extend(s.centers)
        if s.lows is not None:
            ys_all.extend(s.lows)
        if s.highs is not None:
            ys_all.extend(s.highs)
    if not xs_all or not ys_all:
        return [f'<text x="{ox + PANEL_W / 2}" y="{oy + PANEL_H / 2}" text-anchor="middle">no data</text>']

    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = PANEL_W - MARGIN_L - MARGIN_R
    plot_h = PANEL_H - MARGIN_T - MARGIN_B

    def px(x: float) -> float:
        return ox + MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return oy + MARGIN_T + (y_hi - y) / (y_hi - y_lo) * plot_h

    parts = [
        f'<rect x="{ox + MARGIN_L}" y="{oy + MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="white" stroke="#888" stroke-width="1"/>',
        f'<text x="{ox + PANEL_W / 2:.1f}" y="{oy + 18}" text-anchor="middle" '
        f'font-size="13" font-weight="bold">{panel.title}</text>',
    ]
    for tv in _tick_values(y_lo, y_hi):
        if not y_lo <= tv <= y_hi:
            continue
        parts.append(
            f'<line x1="{ox + MARGIN_L - 4}" y1="{py(tv):.1f}" x2="{ox + MARGIN_L}" y2="{py(tv):.1f}" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{ox + MARGIN_L - 7}" y="{py(tv) + 3.5:.1f}" text-anchor="end" font-size="9">{_fmt(tv)}</text>'
        )
    for tv in _tick_values(x_lo, x_hi):
        if not x_lo <= tv <= x_hi:
            continue
        label = _fmt(10**tv) if panel.log10_x else _fmt(tv)
        if panel.log10_x and tv == int(tv):
            label = f"1e{int(tv)}"
        elif panel.log10_x:
            continue
        parts.append(
            f'<line x1="{px(tv):.1f}" y1="{oy + PANEL_H - MARGIN_B}" x2="{px(tv):.1f}" '
            f'y2="{oy + PANEL_H - MARGIN_B + 4}" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{px(tv):.1f}" y="{oy + PANEL_H - MARGIN_B + 15}" text-anchor="middle" font-size="9">{label}</text>'
        )
    parts.append(
        f'<text x="{ox + PANEL_W / 2:.1f}" y="{oy + PANEL_H - 8}" text-anchor="middle" font-size="10">{panel.x_label}</text>'
    )
    if panel.y_label:
        cx, cy = ox + 13, oy + MARGIN_T + plot_h / 2
        parts.append(
            f'<text x="{cx}" y="{cy:.1f}" text-anchor="middle" font-size="10" '
            f'transform="rotate(-90 {cx} {cy:.1f})">{panel.y_label}</text>'
        )

    for i, series in enumerate(panel.series):
        color = PALETTE[i % len(PALETTE)]
        if series.lows is not None and series.highs is not None:
            upper = [f"{px(x):.1f},{py(h):.1f}" for x, h in zip(series.xs, series.highs)]
            lower = [f"{px(x):.1f},{py(l):.1f}" for x, l in zip(reversed(series.xs), reversed(series.lows))]
            parts.append(
                f'<polygon points="{" ".join(upper + lower)}" fill="{color}" opacity="0.18" stroke="none"/>'
            )
        pts = " ".join(f"{px(x):.1f},{py(c):.1f}" for x, c in zip(series.xs, series.centers))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        lx = ox + MARGIN_L + 8
        ly = oy + MARGIN_T + 12 + 12 * i
        parts.append(f'<line x1="{lx}" y1="{ly - 3}" x2="{lx + 14}" y2="{ly - 3}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 18}" y="{ly}" font-size="9">{series.label}</text>')
    return parts


def render(panels: Sequence[Panel], destination: str | Path, columns: int | None = None) -> None:
    """Write the panels as one SVG document, laid out in a row grid."""
    if not panels:
        raise ValueError("no panels to render")
    cols = columns if columns is not None else min(len(panels), 4)
    rows = (len(panels) + cols - 1) // cols
    width = cols * PANEL_W
    height = rows * PANEL_H
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for i, panel in enumerate(panels):
        ox = (i % cols) * PANEL_W
        oy = (i // cols) * PANEL_H
        parts.extend(_panel_svg(panel, ox, oy))
    parts.append("</svg>")
    Path(destination).write_text("\n".join(parts) + "\n", encoding="utf-8")
