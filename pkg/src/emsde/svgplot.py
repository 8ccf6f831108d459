"""Hand-rolled SVG polyline plots (no plotting dependency).

Good enough for the diagnostic figures the CLI emits: one or more panels,
each with an axes box, tick labels and a set of polylines. Output is
deterministic for equal input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Curve", "Panel", "write_svg"]

_COLORS = ["#d62728", "#2ca02c", "#9467bd", "#1f77b4", "#ff7f0e", "#8c564b"]


@dataclass
class Curve:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    color: str | None = None
    dashed: bool = False


@dataclass
class Panel:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    curves: list = field(default_factory=list)


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return raw


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


def write_svg(panels, path, panel_width: int = 420, panel_height: int = 320) -> None:
    """Render the panels side by side into an SVG file."""
    margin = {"left": 62, "right": 14, "top": 30, "bottom": 42}
    total_w = panel_width * len(panels)
    total_h = panel_height
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" '
        f'viewBox="0 0 {total_w} {total_h}">',
        f'<rect width="{total_w}" height="{total_h}" fill="white"/>',
    ]
    for p_idx, panel in enumerate(panels):
        x_off = p_idx * panel_width
        plot_w = panel_width - margin["left"] - margin["right"]
        plot_h = panel_height - margin["top"] - margin["bottom"]
        xs = [np.asarray(c.x, dtype=float) for c in panel.curves]
        ys = [np.asarray(c.y, dtype=float) for c in panel.curves]
        finite_x = np.concatenate([x[np.isfinite(x)] for x in xs]) if xs else np.array([0.0])
        finite_y = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([0.0])
        if finite_x.size == 0:
            finite_x = np.array([0.0, 1.0])
        if finite_y.size == 0:
            finite_y = np.array([0.0, 1.0])
        x_lo, x_hi = float(finite_x.min()), float(finite_x.max())
        y_lo, y_hi = float(finite_y.min()), float(finite_y.max())
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
        pad = 0.04 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad

        def to_px(xv, yv, x_lo=x_lo, x_hi=x_hi, y_lo=y_lo, y_hi=y_hi, x_off=x_off,
                  plot_w=plot_w, plot_h=plot_h):
            px = x_off + margin["left"] + (xv - x_lo) / (x_hi - x_lo) * plot_w
            py = margin["top"] + (1.0 - (yv - y_lo) / (y_hi - y_lo)) * plot_h
            return px, py

        box_x = x_off + margin["left"]
        parts.append(
            f'<rect x="{box_x}" y="{margin["top"]}" width="{plot_w}" height="{plot_h}" '
            'fill="none" stroke="#444" stroke-width="1"/>'
        )
        for tv in _ticks(x_lo, x_hi):
            px, _ = to_px(tv, y_lo)
            parts.append(
                f'<line x1="{px:.2f}" y1="{margin["top"] + plot_h}" x2="{px:.2f}" '
                f'y2="{margin["top"] + plot_h + 4}" stroke="#444"/>'
            )
            parts.append(
                f'<text x="{px:.2f}" y="{margin["top"] + plot_h + 16}" font-size="10" '
                f'text-anchor="middle" font-family="sans-serif">{_fmt(tv)}</text>'
            )
        for tv in _ticks(y_lo, y_hi):
            _, py = to_px(x_lo, tv)
            parts.append(
                f'<line x1="{box_x - 4}" y1="{py:.2f}" x2="{box_x}" y2="{py:.2f}" stroke="#444"/>'
            )
            parts.append(
                f'<text x="{box_x - 7}" y="{py + 3:.2f}" font-size="10" text-anchor="end" '
                f'font-family="sans-serif">{_fmt(tv)}</text>'
            )
        if panel.title:
            parts.append(
                f'<text x="{x_off + panel_width / 2:.2f}" y="18" font-size="12" '
                f'text-anchor="middle" font-family="sans-serif">{panel.title}</text>'
            )
        if panel.xlabel:
            parts.append(
                f'<text x="{x_off + margin["left"] + plot_w / 2:.2f}" y="{total_h - 8}" '
                f'font-size="11" text-anchor="middle" font-family="sans-serif">{panel.xlabel}</text>'
            )
        if panel.ylabel:
            cy = margin["top"] + plot_h / 2
            parts.append(
                f'<text x="{x_off + 14}" y="{cy:.2f}" font-size="11" text-anchor="middle" '
                f'font-family="sans-serif" transform="rotate(-90 {x_off + 14} {cy:.2f})">'
                f"{panel.ylabel}</text>"
            )
        legend_y = margin["top"] + 14
        for c_idx, curve in enumerate(panel.curves):
            color = curve.color or _COLORS[c_idx % len(_COLORS)]
            x = np.asarray(curve.x, dtype=float)
            y = np.asarray(curve.y, dtype=float)
            ok = np.isfinite(x) & np.isfinite(y)
            pts = " ".join(
                f"{px:.2f},{py:.2f}" for px, py in (to_px(xv, yv) for xv, yv in zip(x[ok], y[ok]))
            )
            dash = ' stroke-dasharray="6,4"' if curve.dashed else ""
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"{dash}/>'
            )
            if curve.label:
                lx = box_x + plot_w - 6
                parts.append(
                    f'<text x="{lx}" y="{legend_y}" font-size="10" text-anchor="end" '
                    f'font-family="sans-serif" fill="{color}">{curve.label}</text>'
                )
                legend_y += 13
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
