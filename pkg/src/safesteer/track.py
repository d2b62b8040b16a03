"""Synthetic closed-circuit occupancy maps.

The published experiments use a closed track bitmap that is not distributed,
so experiments and acceptance tests regenerate a comparable one: a smooth
closed centerline with a constant road half-width on a square map. Free
cells are the road; everything else (including the interior island) is
occupied.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .grid import OccupancyGrid


def make_track(
    size_m: float = 300.0,
    resolution: float = 1.0,
    base_radius: float = 64.0,
    wobble: float = 10.0,
    lobes: int = 2,
    half_width: float = 6.75,
    origin: tuple[float, float] = (0.0, 0.0),
) -> OccupancyGrid:
    """Closed ring road with centerline r(phi) = base_radius + wobble cos(lobes phi).

    The track is centered on the map; the map center itself lies inside the
    occupied interior island, which makes it a natural off-road goal.
    """
    n_cells = int(round(size_m / resolution))
    cx = origin[0] + 0.5 * (n_cells - 1) * resolution
    cy = origin[1] + 0.5 * (n_cells - 1) * resolution

    phi = np.linspace(0.0, 2.0 * np.pi, 6000, endpoint=False)
    r = base_radius + wobble * np.cos(lobes * phi)
    curve = np.column_stack([cx + r * np.cos(phi), cy + r * np.sin(phi)])
    tree = cKDTree(curve)

    xs = origin[0] + np.arange(n_cells) * resolution
    ys = origin[1] + np.arange(n_cells) * resolution
    gx, gy = np.meshgrid(xs, ys)
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    dist, _ = tree.query(centers, workers=-1)
    occupied = (dist > half_width).reshape(n_cells, n_cells)
    return OccupancyGrid(occupied=occupied, resolution=resolution, origin=origin)


def track_center(grid: OccupancyGrid) -> tuple[float, float]:
    """Map center (inside the interior island for make_track maps)."""
    return (
        grid.origin[0] + 0.5 * (grid.width - 1) * grid.resolution,
        grid.origin[1] + 0.5 * (grid.height - 1) * grid.resolution,
    )
