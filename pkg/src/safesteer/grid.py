"""Occupancy grids, exact Euclidean distance fields, and training datasets.

Coordinate conventions:
    Grids are stored row-major with row 0 at the *bottom* (smallest y).
    Image files have row 0 at the top, so loading flips vertically.
    The world position of cell (row, col) center is
        x = origin_x + col * resolution,
        y = origin_y + row * resolution,
    where ``origin`` is the center of cell (0, 0).

Distances are measured between cell centers; sub-cell geometry is ignored.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_OCCUPANCY_THRESHOLD = 128


@dataclass(frozen=True)
class OccupancyGrid:
    """Binary occupancy map. ``occupied[row, col]`` is True on unsafe cells."""

    occupied: np.ndarray  # (height, width) bool
    resolution: float  # meters per cell
    origin: tuple[float, float] = (0.0, 0.0)  # world coords of cell (0,0) center

    def __post_init__(self):
        occ = np.asarray(self.occupied, dtype=bool)
        object.__setattr__(self, "occupied", occ)
        if occ.ndim != 2 or occ.shape[0] < 1 or occ.shape[1] < 1:
            raise ValueError("grid must be 2-D with at least one cell")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if occ.all() or not occ.any():
            raise ValueError(
                "degenerate grid: needs at least one free and one occupied cell"
            )

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        """Physical size (x_extent, y_extent) in meters, cell edges included."""
        return (self.width * self.resolution, self.height * self.resolution)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World x coordinates per column and y coordinates per row."""
        xs = self.origin[0] + np.arange(self.width) * self.resolution
        ys = self.origin[1] + np.arange(self.height) * self.resolution
        return xs, ys


@dataclass(frozen=True)
class DistanceField:
    """Per-cell Euclidean distance to the nearest occupied cell center, meters.

    Values are exactly 0 on occupied cells and positive elsewhere.
    """

    values: np.ndarray  # (height, width) float64, meters
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return (self.width * self.resolution, self.height * self.resolution)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + np.arange(self.width) * self.resolution
        ys = self.origin[1] + np.arange(self.height) * self.resolution
        return xs, ys

    def interpolate(self, x: float, y: float) -> float:
        """Bilinearly interpolated distance at a world point.

        The point must lie within the rectangle spanned by the outermost
        cell centers.
        """
        col = (x - self.origin[0]) / self.resolution
        row = (y - self.origin[1]) / self.resolution
        if not (0.0 <= col <= self.width - 1 and 0.0 <= row <= self.height - 1):
            raise ValueError(f"point ({x}, {y}) outside field extent")
        c0 = min(int(col), self.width - 2) if self.width > 1 else 0
        r0 = min(int(row), self.height - 2) if self.height > 1 else 0
        c1 = min(c0 + 1, self.width - 1)
        r1 = min(r0 + 1, self.height - 1)
        tx = col - c0
        ty = row - r0
        v = self.values
        top = v[r0, c0] * (1 - tx) + v[r0, c1] * tx
        bot = v[r1, c0] * (1 - tx) + v[r1, c1] * tx
        return float(top * (1 - ty) + bot * ty)


@dataclass(frozen=True)
class EdfDataset:
    """Training samples (z_i, d_i): world positions and their EDF values."""

    points: np.ndarray  # (n, 2) float64, meters
    distances: np.ndarray  # (n,) float64, meters

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        dst = np.asarray(self.distances, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or dst.shape != (pts.shape[0],):
            raise ValueError("points must be (n, 2) with matching distances (n,)")
        if pts.shape[0] == 0:
            raise ValueError("dataset is empty")
        if (dst < 0).any():
            raise ValueError("distances must be nonnegative")
        if len(np.unique(pts, axis=0)) != pts.shape[0]:
            raise ValueError("duplicate sample positions")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "distances", dst)

    @property
    def count(self) -> int:
        return self.points.shape[0]


def _read_sidecar(map_path: Path) -> dict[str, float]:
    """Parse the plain-text key/value metadata file next to a map image."""
    meta_path = map_path.with_suffix(".meta")
    if not meta_path.exists():
        raise ValueError(f"missing metadata sidecar {meta_path}")
    meta: dict[str, float] = {}
    for lineno, line in enumerate(meta_path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        if not _:
            key, _, value = line.partition(":")
        if not _:
            raise ValueError(f"{meta_path}:{lineno}: expected 'key = value'")
        try:
            meta[key.strip()] = float(value.strip())
        except ValueError as exc:
            raise ValueError(f"{meta_path}:{lineno}: bad value for {key.strip()!r}") from exc
    for required in ("resolution_m", "origin_x", "origin_y"):
        if required not in meta:
            raise ValueError(f"{meta_path}: missing key {required!r}")
    return meta


def load_grid(path: str | Path, occupancy_threshold: int | None = None) -> OccupancyGrid:
    """Load a PGM (P2/P5) or single-channel PNG map plus its sidecar metadata.

    Cells with gray value <= threshold are occupied. The threshold comes from
    the argument if given, else the sidecar ``threshold`` key, else 128.
    """
    path = Path(path)
    if not path.exists():
        raise ValueError(f"map file not found: {path}")
    meta = _read_sidecar(path)
    if occupancy_threshold is None:
        occupancy_threshold = int(meta.get("threshold", DEFAULT_OCCUPANCY_THRESHOLD))
    try:
        with Image.open(path) as img:
            gray = np.asarray(img.convert("L"))
    except Exception as exc:
        raise ValueError(f"malformed map image {path}: {exc}") from exc
    # Image row 0 is the top of the picture; flip so row 0 has the smallest y.
    occupied = np.flipud(gray <= occupancy_threshold).copy()
    return OccupancyGrid(
        occupied=occupied,
        resolution=meta["resolution_m"],
        origin=(meta["origin_x"], meta["origin_y"]),
    )


def write_grid(grid: OccupancyGrid, path: str | Path, threshold: int | None = None) -> None:
    """Write a grid as a binary PGM (occupied black, free white) plus sidecar."""
    path = Path(path)
    gray = np.where(np.flipud(grid.occupied), 0, 255).astype(np.uint8)
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    path.write_bytes(header + gray.tobytes())
    lines = [
        f"resolution_m = {grid.resolution!r}",
        f"origin_x = {grid.origin[0]!r}",
        f"origin_y = {grid.origin[1]!r}",
    ]
    if threshold is not None:
        lines.append(f"threshold = {threshold}")
    path.with_suffix(".meta").write_text("\n".join(lines) + "\n")


def _squared_edt_1d(f: np.ndarray, big: float) -> np.ndarray:
    """Lower-envelope pass: d[q] = min_v (q - v)^2 + f[v] for one scanline.

    All f values are integers (or the ``big`` sentinel), so outputs are exact.
    """
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.intp)  # parabola sites
    z = np.empty(n + 1)  # envelope breakpoints
    k = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def exact_edf(grid: OccupancyGrid) -> DistanceField:
    """Exact Euclidean distance transform via the two-pass squared-distance
    algorithm (1-D column scan, then a lower-envelope pass along rows).

    Equals brute-force minimization over all occupied cell centers bit for bit.
    """
    occ = grid.occupied
    height, width = occ.shape
    big = float(2 * (max(height, width) ** 2) + 1)

    # Pass 1, per column: squared distance to the nearest occupied cell in
    # the same column (vectorized forward/backward scans).
    rows = np.arange(height, dtype=np.int64)[:, None]
    site = np.where(occ, rows, np.int64(-(1 << 40)))
    nearest_below = np.maximum.accumulate(site, axis=0)
    up = rows - nearest_below  # distance to occupied at or below
    site = np.where(occ, rows, np.int64(1 << 40))
    nearest_above = np.minimum.accumulate(site[::-1], axis=0)[::-1]
    down = nearest_above - rows
    col_dist = np.minimum(up, down).astype(np.float64)
    col_sq = np.where(col_dist > height, big, col_dist**2)

    # Pass 2, per row: combine columns through the parabola envelope.
    sq = np.empty_like(col_sq)
    for r in range(height):
        sq[r] = _squared_edt_1d(col_sq[r], big)

    values = np.sqrt(sq) * grid.resolution
    return DistanceField(values=values, resolution=grid.resolution, origin=grid.origin)


def sample_dataset(field: DistanceField, stride: int, free_only: bool = True) -> EdfDataset:
    """Sample every stride-th cell center of a distance field, row-major.

    With ``free_only`` (the default) occupied cells are skipped, so the
    samples cover exactly the free space the regressor has to learn.
    Deterministic: identical input gives identical sample order and values.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride > field.width or stride > field.height:
        raise ValueError(
            f"stride {stride} larger than grid ({field.width}x{field.height})"
        )
    xs, ys = field.cell_centers()
    cols, rows = np.meshgrid(np.arange(0, field.width, stride),
                             np.arange(0, field.height, stride))
    cols = cols.ravel()
    rows = rows.ravel()
    d = field.values[rows, cols]
    if free_only:
        keep = d > 0
        rows, cols, d = rows[keep], cols[keep], d[keep]
    points = np.column_stack([xs[cols], ys[rows]])
    return EdfDataset(points=points, distances=d.astype(np.float64))


def write_dataset_csv(dataset: EdfDataset, path: str | Path) -> None:
    """Write samples as ``x_m,y_m,d_m`` rows at full (round-trip) precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x_m", "y_m", "d_m"])
    for (x, y), d in zip(dataset.points, dataset.distances):
        writer.writerow([repr(float(x)), repr(float(y)), repr(float(d))])
    Path(path).write_text(buf.getvalue())


def read_dataset_csv(path: str | Path) -> EdfDataset:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x_m", "y_m", "d_m"]:
            raise ValueError(f"{path}: expected header x_m,y_m,d_m, got {header}")
        rows = [(float(x), float(y), float(d)) for x, y, d in reader]
    if not rows:
        raise ValueError(f"{path}: no samples")
    arr = np.asarray(rows, dtype=np.float64)
    return EdfDataset(points=arr[:, :2], distances=arr[:, 2])
