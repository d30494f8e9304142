"""Standalone SVG rendering of noise maps.

Rasters become heatmaps on a diverging scale centered on 0 dB (blue below
the shot-noise limit, red above); sweeps become a polyline of ``nrf_db``
against edge position.  Output is plain text so plots diff cleanly.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .scan import NoiseMap

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 110, "top": 30, "bottom": 55}


def diverging_color(value: float, limit: float) -> str:
    """Blue-white-red color for ``value`` on ``[-limit, limit]``."""
    t = 0.0 if limit <= 0 or not np.isfinite(value) else float(np.clip(value / limit, -1, 1))
    if t < 0:
        r, g, b = 255 * (1 + t), 255 * (1 + t), 255
    else:
        r, g, b = 255, 255 * (1 - t), 255 * (1 - t)
    return "#{:02x}{:02x}{:02x}".format(round(r), round(g), round(b))


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi == lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def _frame() -> tuple[float, float, float, float]:
    x0, y0 = MARGIN["left"], MARGIN["top"]
    return x0, y0, WIDTH - MARGIN["right"] - x0, HEIGHT - MARGIN["bottom"] - y0


def _axes(parts, xr, yr, xlabel, ylabel, title):
    x0, y0, w, h = _frame()
    parts.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="black"/>')
    for v in _ticks(*xr):
        x = x0 + (v - xr[0]) / ((xr[1] - xr[0]) or 1) * w
        parts.append(f'<line x1="{x:.2f}" y1="{y0 + h}" x2="{x:.2f}" y2="{y0 + h + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{y0 + h + 18}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(*yr):
        y = y0 + h - (v - yr[0]) / ((yr[1] - yr[0]) or 1) * h
        parts.append(f'<line x1="{x0 - 5}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 8}" y="{y + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    parts.append(f'<text x="{x0 + w / 2}" y="{HEIGHT - 12}" text-anchor="middle">'
                 f'{escape(xlabel)}</text>')
    parts.append(f'<text x="16" y="{y0 + h / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {y0 + h / 2})">{escape(ylabel)}</text>')
    parts.append(f'<text x="{x0 + w / 2}" y="18" text-anchor="middle">{escape(title)}</text>')


def _document(parts) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, *parts, "</svg>"]) + "\n"


def _edges(coords: np.ndarray) -> np.ndarray:
    """Cell boundaries around each coordinate (midpoints between samples)."""
    if coords.size == 1:
        return np.array([coords[0] - 0.5, coords[0] + 0.5])
    mid = (coords[1:] + coords[:-1]) / 2
    return np.concatenate([[2 * coords[0] - mid[0]], mid, [2 * coords[-1] - mid[-1]]])


def heatmap_svg(noise_map: NoiseMap, title: str = "") -> str:
    """Raster heatmap: probe edge along x, conjugate edge along y."""
    db = noise_map.nrf_db
    finite = db[np.isfinite(db)]
    limit = float(np.max(np.abs(finite))) if finite.size else 1.0
    limit = limit or 1.0
    px, cy = _edges(noise_map.probe_coords), _edges(noise_map.conj_coords)
    xr = (float(min(px[0], px[-1])), float(max(px[0], px[-1])))
    yr = (float(min(cy[0], cy[-1])), float(max(cy[0], cy[-1])))
    x0, y0, w, h = _frame()

    def sx(v):
        return x0 + (v - xr[0]) / (xr[1] - xr[0]) * w

    def sy(v):
        return y0 + h - (v - yr[0]) / (yr[1] - yr[0]) * h

    parts = ['<g class="cells" shape-rendering="crispEdges">']
    for i in range(db.shape[0]):
        a, b = sorted((sx(px[i]), sx(px[i + 1])))
        for j in range(db.shape[1]):
            c, d = sorted((sy(cy[j]), sy(cy[j + 1])))
            parts.append(
                f'<rect x="{a:.2f}" y="{c:.2f}" width="{b - a:.2f}" height="{d - c:.2f}" '
                f'fill="{diverging_color(db[i, j], limit)}"><title>{db[i, j]:.3f} dB</title></rect>'
            )
    parts.append("</g>")
    _axes(parts, xr, yr, "probe edge (mm)", "conjugate edge (mm)", title)

    # color bar
    bx, bw = WIDTH - MARGIN["right"] + 25, 16
    n = 64
    for k in range(n):
        v = limit - 2 * limit * (k + 0.5) / n
        parts.append(f'<rect x="{bx}" y="{y0 + k * h / n:.2f}" width="{bw}" '
                     f'height="{h / n + 0.5:.2f}" fill="{diverging_color(v, limit)}"/>')
    for v in (limit, 0.0, -limit):
        y = y0 + (limit - v) / (2 * limit) * h
        parts.append(f'<text x="{bx + bw + 4}" y="{y + 4:.2f}">{v:+.2f}</text>')
    parts.append(f'<text x="{bx + bw / 2}" y="{y0 - 8}" text-anchor="middle">NRF (dB)</text>')
    return _document(parts)


def sweep_svg(noise_map: NoiseMap, title: str = "") -> str:
    """Polyline of ``nrf_db`` against probe edge position."""
    x = noise_map.probe_coords
    y = noise_map.nrf_db
    keep = np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.size == 0:
        raise ValueError("sweep has no finite values to plot")
    xr = (float(x.min()), float(x.max()))
    lo, hi = float(min(y.min(), 0.0)), float(max(y.max(), 0.0))
    pad = 0.05 * (hi - lo or 1.0)
    yr = (lo - pad, hi + pad)
    if xr[0] == xr[1]:
        xr = (xr[0] - 0.5, xr[1] + 0.5)
    x0, y0, w, h = _frame()

    def sx(v):
        return x0 + (v - xr[0]) / (xr[1] - xr[0]) * w

    def sy(v):
        return y0 + h - (v - yr[0]) / (yr[1] - yr[0]) * h

    parts = []
    parts.append(f'<line x1="{x0}" y1="{sy(0.0):.2f}" x2="{x0 + w}" y2="{sy(0.0):.2f}" '
                 f'stroke="gray" stroke-dasharray="4 3"/>')
    points = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
    parts.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{points}"/>')
    _axes(parts, xr, yr, f"{noise_map.config.sweep_axis} edge position (mm)", "NRF (dB)", title)
    return _document(parts)


def render(noise_map: NoiseMap, title: str = "") -> str:
    if noise_map.nrf.size == 0:
        raise ValueError("empty noise map")
    if noise_map.kind == "raster":
        return heatmap_svg(noise_map, title)
    return sweep_svg(noise_map, title)


def write_svg(noise_map: NoiseMap, path: str | Path, title: str = "") -> None:
    Path(path).write_text(render(noise_map, title))
