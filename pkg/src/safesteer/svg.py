"""Minimal SVG emission: map background, learned-field level sets via
marching squares, and trajectory overlay. No plotting dependencies."""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image

from .grid import OccupancyGrid

# marching-squares segment table: cell corner order is
#   bit 0 = (r, c), bit 1 = (r, c+1), bit 2 = (r+1, c+1), bit 3 = (r+1, c)
# each entry lists pairs of edges (0 bottom, 1 right, 2 top, 3 left) to join.
_SEGMENTS = {
    0: [], 15: [],
    1: [(3, 0)], 14: [(3, 0)],
    2: [(0, 1)], 13: [(0, 1)],
    3: [(3, 1)], 12: [(3, 1)],
    4: [(1, 2)], 11: [(1, 2)],
    6: [(0, 2)], 9: [(0, 2)],
    7: [(3, 2)], 8: [(3, 2)],
    5: [(3, 0), (1, 2)],
    10: [(0, 1), (3, 2)],
}


def _edge_point(edge, r, c, values, level):
    """Linear interpolation of the level crossing on one cell edge, in
    (col, row) fractional grid units."""
    v00 = values[r, c]
    v01 = values[r, c + 1]
    v11 = values[r + 1, c + 1]
    v10 = values[r + 1, c]

    def t(a, b):
        return 0.5 if b == a else (level - a) / (b - a)

    if edge == 0:  # bottom: (r,c)-(r,c+1)
        return (c + t(v00, v01), r)
    if edge == 1:  # right: (r,c+1)-(r+1,c+1)
        return (c + 1, r + t(v01, v11))
    if edge == 2:  # top: (r+1,c)-(r+1,c+1)
        return (c + t(v10, v11), r + 1)
    return (c, r + t(v00, v10))  # left: (r,c)-(r+1,c)


def marching_squares(values: np.ndarray, level: float) -> list[tuple]:
    """Level-set line segments of a scalar grid, as ((x0, y0), (x1, y1))
    pairs in fractional (col, row) coordinates."""
    segments = []
    h, w = values.shape
    above = values >= level
    for r in range(h - 1):
        for c in range(w - 1):
            case = (int(above[r, c]) | (int(above[r, c + 1]) << 1)
                    | (int(above[r + 1, c + 1]) << 2) | (int(above[r + 1, c]) << 3))
            for e0, e1 in _SEGMENTS[case]:
                segments.append((_edge_point(e0, r, c, values, level),
                                 _edge_point(e1, r, c, values, level)))
    return segments


def _map_png_base64(grid: OccupancyGrid) -> str:
    gray = np.where(np.flipud(grid.occupied), 40, 220).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(gray, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def write_overlay_svg(
    path: str | Path,
    grid: OccupancyGrid,
    positions: np.ndarray | None = None,
    contour_values: np.ndarray | None = None,
    contour_origin: tuple[float, float] = (0.0, 0.0),
    contour_step: float = 1.0,
    contour_levels: tuple[float, ...] = (),
    goal: tuple[float, float] | None = None,
    scale: float = 2.0,
) -> None:
    """Render the map with optional level-set contours and a trajectory.

    ``contour_values`` is a (rows, cols) sample of the learned field whose
    cell (0, 0) center sits at ``contour_origin`` with ``contour_step``
    spacing; ``contour_levels`` are drawn with marching squares.
    """
    ex, ey = grid.extent
    width = ex * scale
    height = ey * scale

    def to_svg(x, y):
        sx = (x - grid.origin[0] + 0.5 * grid.resolution) * scale
        sy = height - (y - grid.origin[1] + 0.5 * grid.resolution) * scale
        return sx, sy

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<image x="0" y="0" width="{width:.0f}" height="{height:.0f}" '
        f'image-rendering="pixelated" href="data:image/png;base64,'
        f'{_map_png_base64(grid)}"/>',
    ]

    if contour_values is not None:
        colors = ["#d4aa00", "#cc4444", "#4488cc", "#44aa44"]
        for idx, level in enumerate(contour_levels):
            pieces = []
            for (c0, r0), (c1, r1) in marching_squares(contour_values, level):
                x0, y0 = to_svg(contour_origin[0] + c0 * contour_step,
                                contour_origin[1] + r0 * contour_step)
                x1, y1 = to_svg(contour_origin[0] + c1 * contour_step,
                                contour_origin[1] + r1 * contour_step)
                pieces.append(f"M{x0:.1f} {y0:.1f}L{x1:.1f} {y1:.1f}")
            parts.append(f'<path d="{"".join(pieces)}" stroke='
                         f'"{colors[idx % len(colors)]}" stroke-width="1" fill="none"/>')

    if positions is not None and len(positions):
        pts = " ".join("{:.1f},{:.1f}".format(*to_svg(x, y)) for x, y in positions)
        parts.append(f'<polyline points="{pts}" stroke="#202080" '
                     f'stroke-width="1.5" fill="none"/>')
        sx, sy = to_svg(*positions[0])
        parts.append(f'<circle cx="{sx:.1f}" cy="{sy:.1f}" r="4" fill="#202080"/>')

    if goal is not None:
        gx, gy = to_svg(*goal)
        parts.append(f'<circle cx="{gx:.1f}" cy="{gy:.1f}" r="5" stroke="#cc2222" '
                     f'stroke-width="2" fill="none"/>')

    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
