"""Scene acquisition pipeline.

point cloud -> obstacle map + laser-scan map -> DFS lattice sampling -> traversal plan

Map convention: cell (row, col) covers
``[origin_x + col*res, origin_x + (col+1)*res) x [origin_y + row*res, ...)``,
so rows grow with world y (South) and columns with world x (East).
"""
import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from PIL import Image

from .exceptions import PipelineError

XY = Tuple[float, float]


class CellState(IntEnum):
    UNKNOWN = -1
    FREE = 0
    OCCUPIED = 1


@dataclass(frozen=True)
class HeightBand:
    z_min: float
    z_max: float

    def __post_init__(self) -> None:
        if not self.z_min < self.z_max:
            raise PipelineError(
                f"Empty height band [{self.z_min}, {self.z_max}]", "empty-band"
            )


@dataclass(frozen=True, eq=False)
class PointCloud:
    xyz: np.ndarray
    """float64 (P, 3) in meters."""
    rgb: np.ndarray
    """uint8 (P, 3)."""

    def __post_init__(self) -> None:
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        rgb = np.asarray(self.rgb, dtype=np.uint8).reshape(-1, 3)
        if len(xyz) != len(rgb):
            raise PipelineError("Point and color counts differ", "non-finite-point")
        bad = np.flatnonzero(~np.isfinite(xyz).all(axis=1))
        if bad.size:
            raise PipelineError(
                f"Non-finite point at index {int(bad[0])}", "non-finite-point"
            )
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "rgb", rgb)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8))

    def __len__(self) -> int:
        return len(self.xyz)

    def concat(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(
            np.concatenate([self.xyz, other.xyz]), np.concatenate([self.rgb, other.rgb])
        )


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    origin: XY
    resolution: float
    cells: np.ndarray
    """int8 (rows, cols) of CellState values."""

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise PipelineError(f"Resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int8))

    @property
    def rows(self) -> int:
        return int(self.cells.shape[0])

    @property
    def cols(self) -> int:
        return int(self.cells.shape[1])

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        col = int(np.floor((x - self.origin[0]) / self.resolution))
        row = int(np.floor((y - self.origin[1]) / self.resolution))
        return row, col

    def contains(self, row: int, col: int) -> bool:
        return 0 <= row < self.rows and 0 <= col < self.cols

    def center_of(self, row: int, col: int) -> XY:
        return (
            self.origin[0] + (col + 0.5) * self.resolution,
            self.origin[1] + (row + 0.5) * self.resolution,
        )

    def count(self, state: CellState) -> int:
        return int(np.count_nonzero(self.cells == state))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            tuple(self.origin) == tuple(other.origin)
            and self.resolution == other.resolution
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class SampledLocation:
    row: int
    col: int
    x: float
    y: float


Bounds = Tuple[XY, XY]


def cloud_bounds(cloud: PointCloud) -> Optional[Bounds]:
    if not len(cloud):
        return None
    lo = cloud.xyz[:, :2].min(axis=0)
    hi = cloud.xyz[:, :2].max(axis=0)
    return (float(lo[0]), float(lo[1])), (float(hi[0]), float(hi[1]))


def _grid_frame(bounds: Optional[Bounds], resolution: float) -> Tuple[XY, int, int]:
    if bounds is None:
        return (0.0, 0.0), 1, 1
    (x0, y0), (x1, y1) = bounds
    ox = np.floor(x0 / resolution) * resolution
    oy = np.floor(y0 / resolution) * resolution
    cols = int(np.floor((x1 - ox) / resolution)) + 1
    rows = int(np.floor((y1 - oy) / resolution)) + 1
    return (float(ox), float(oy)), rows, cols


def _bin_counts(
    xy: np.ndarray, origin: XY, resolution: float, rows: int, cols: int
) -> np.ndarray:
    col = np.floor((xy[:, 0] - origin[0]) / resolution).astype(np.int64)
    row = np.floor((xy[:, 1] - origin[1]) / resolution).astype(np.int64)
    inside = (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
    flat = row[inside] * cols + col[inside]
    return np.bincount(flat, minlength=rows * cols).reshape(rows, cols)


def build_obstacle_map(
    cloud: PointCloud,
    band: HeightBand,
    resolution: float = 0.05,
    min_points: int = 3,
    bounds: Optional[Bounds] = None,
) -> OccupancyGrid:
    """Project the points inside `band` onto a 2D occupancy raster.

    A cell is occupied when at least `min_points` in-band points fall into
    it, unknown when no point at any height falls into it, free otherwise.
    The grid spans `bounds` (default: the cloud's xy bounding box).
    """
    if resolution <= 0:
        raise PipelineError(f"Resolution must be positive, got {resolution}")
    if min_points < 1:
        raise PipelineError(f"min_points must be >= 1, got {min_points}")
    origin, rows, cols = _grid_frame(bounds or cloud_bounds(cloud), resolution)
    xy = cloud.xyz[:, :2]
    z = cloud.xyz[:, 2]
    in_band = (z >= band.z_min) & (z <= band.z_max)
    any_count = _bin_counts(xy, origin, resolution, rows, cols)
    band_count = _bin_counts(xy[in_band], origin, resolution, rows, cols)
    cells = np.full((rows, cols), CellState.FREE, dtype=np.int8)
    cells[any_count == 0] = CellState.UNKNOWN
    cells[band_count >= min_points] = CellState.OCCUPIED
    grid = OccupancyGrid(origin, resolution, cells)
    logger.debug(
        "Obstacle map {}x{}: {} occupied, {} free, {} unknown",
        rows,
        cols,
        grid.count(CellState.OCCUPIED),
        grid.count(CellState.FREE),
        grid.count(CellState.UNKNOWN),
    )
    return grid


def build_laserscan_map(
    cloud: PointCloud,
    sensor_height: float,
    slab_thickness: float,
    resolution: float = 0.05,
    min_points: int = 3,
    bounds: Optional[Bounds] = None,
) -> OccupancyGrid:
    """Occupancy of a thin slab centered on the range sensor's height."""
    if slab_thickness <= 0:
        raise PipelineError(
            f"Slab thickness must be positive, got {slab_thickness}", "bad-slab"
        )
    band = HeightBand(
        sensor_height - slab_thickness / 2, sensor_height + slab_thickness / 2
    )
    return build_obstacle_map(cloud, band, resolution, min_points, bounds)


def _disc_offsets(radius: float, resolution: float) -> np.ndarray:
    """Cell offsets whose centers lie within `radius` of a cell center."""
    r = int(np.ceil(radius / resolution))
    dr, dc = np.mgrid[-r : r + 1, -r : r + 1]
    keep = (dr * resolution) ** 2 + (dc * resolution) ** 2 <= radius**2 + 1e-12
    return np.stack([dr[keep], dc[keep]], axis=1)


def _node_is_clear(
    grid: OccupancyGrid, x: float, y: float, offsets: np.ndarray
) -> bool:
    row, col = grid.cell_of(x, y)
    if not grid.contains(row, col) or grid.cells[row, col] != CellState.FREE:
        return False
    rr = row + offsets[:, 0]
    cc = col + offsets[:, 1]
    inside = (rr >= 0) & (rr < grid.rows) & (cc >= 0) & (cc < grid.cols)
    return not np.any(grid.cells[rr[inside], cc[inside]] == CellState.OCCUPIED)


# Fixed N, E, S, W exploration order; (di, dj) in lattice (row, col) units.
_DFS_ORDER = ((-1, 0), (0, 1), (1, 0), (0, -1))


def sample_grid_locations(
    obstacle: OccupancyGrid,
    start: XY,
    grid_size: float = 0.5,
    clearance: float = 0.18,
) -> List[SampledLocation]:
    """Depth-first lattice exploration from a user-given start position.

    Lattice nodes are ``start + grid_size * (j, i)``. A node is kept when its
    map cell is free and no occupied cell lies within `clearance`; the result
    is every kept node reachable from `start` through 4-adjacent kept nodes,
    in DFS discovery order, with lattice coordinates shifted to start at 0.
    """
    if grid_size <= 0:
        raise PipelineError(f"grid_size must be positive, got {grid_size}")
    row, col = obstacle.cell_of(*start)
    if not obstacle.contains(row, col):
        raise PipelineError(f"Start {start} lies outside the map", "start-outside")
    offsets = _disc_offsets(clearance, obstacle.resolution)

    def node_xy(i: int, j: int) -> XY:
        return (start[0] + j * grid_size, start[1] + i * grid_size)

    if not _node_is_clear(obstacle, *start, offsets):
        raise PipelineError(
            f"Start {start} is not free with clearance {clearance}", "start-blocked"
        )

    order: List[Tuple[int, int]] = []
    visited = set()
    rejected = set()
    stack = [(0, 0)]
    while stack:
        node = stack.pop()
        if node in visited:
            continue
        visited.add(node)
        order.append(node)
        # Reversed so that N is popped (explored) first.
        for di, dj in reversed(_DFS_ORDER):
            nxt = (node[0] + di, node[1] + dj)
            if nxt in visited or nxt in rejected:
                continue
            if _node_is_clear(obstacle, *node_xy(*nxt), offsets):
                stack.append(nxt)
            else:
                rejected.add(nxt)

    min_i = min(i for i, _ in order)
    min_j = min(j for _, j in order)
    locations = [
        SampledLocation(i - min_i, j - min_j, *node_xy(i, j)) for i, j in order
    ]
    logger.debug("Sampled {} lattice locations from {}", len(locations), start)
    return locations


def _lattice_neighbors(locations: Sequence[SampledLocation]) -> Dict[int, List[int]]:
    index = {(loc.row, loc.col): k for k, loc in enumerate(locations)}
    neighbors: Dict[int, List[int]] = {}
    for k, loc in enumerate(locations):
        neighbors[k] = [
            index[(loc.row + di, loc.col + dj)]
            for di, dj in _DFS_ORDER
            if (loc.row + di, loc.col + dj) in index
        ]
    return neighbors


def traversal_plan(locations: Sequence[SampledLocation]) -> List[int]:
    """Walk that visits every location, backtracking along the DFS tree.

    Consecutive entries are lattice neighbors; the walk stops as soon as the
    last location is reached, so its length is at most ``2N - 1``.
    """
    if not locations:
        return []
    neighbors = _lattice_neighbors(locations)
    visited = {0}
    walk = [0]
    path = [0]
    while path and len(visited) < len(locations):
        here = path[-1]
        nxt = next((n for n in neighbors[here] if n not in visited), None)
        if nxt is None:
            path.pop()
            if path:
                walk.append(path[-1])
            continue
        visited.add(nxt)
        path.append(nxt)
        walk.append(nxt)
    if len(visited) < len(locations):
        raise PipelineError(
            f"Locations are disconnected: reached {len(visited)} of {len(locations)}",
            "disconnected",
        )
    return walk


MAP_COLORS = {
    CellState.OCCUPIED: (0, 0, 0),
    CellState.FREE: (255, 255, 255),
    CellState.UNKNOWN: (128, 128, 128),
}
LOCATION_COLOR = (220, 30, 30)


def rasterize_map_image(
    grid: OccupancyGrid,
    overlay: Optional[Sequence[SampledLocation]] = None,
    scale: int = 4,
) -> np.ndarray:
    """RGB image with one `scale` x `scale` pixel block per map cell."""
    image = np.zeros((grid.rows, grid.cols, 3), dtype=np.uint8)
    for state, color in MAP_COLORS.items():
        image[grid.cells == state] = color
    for loc in overlay or ():
        row, col = grid.cell_of(loc.x, loc.y)
        if grid.contains(row, col):
            image[row, col] = LOCATION_COLOR
    return np.repeat(np.repeat(image, scale, axis=0), scale, axis=1)


def read_point_cloud(path: Path) -> PointCloud:
    """Read an ASCII ``x y z r g b`` file, skipping PLY headers and comments."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise PipelineError(f"Cannot read point cloud {path}: {e}", "unreadable-cloud")
    if lines and lines[0].strip() == "ply":
        try:
            lines = lines[lines.index("end_header") + 1 :]
        except ValueError:
            raise PipelineError(f"{path}: PLY header without end_header", "unreadable-cloud")
    rows = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            values = [float(v) for v in parts[:6]]
        except ValueError:
            # header-ish line
            continue
        if len(values) == 3:
            values += [255.0, 255.0, 255.0]
        if len(values) != 6:
            raise PipelineError(f"{path}:{lineno}: expected x y z [r g b]", "unreadable-cloud")
        rows.append(values)
    if not rows:
        return PointCloud.empty()
    data = np.asarray(rows, dtype=np.float64)
    return PointCloud(data[:, :3], np.clip(data[:, 3:], 0, 255).astype(np.uint8))


def write_point_cloud(cloud: PointCloud, path: Path) -> None:
    """Write an ASCII PLY file readable by `read_point_cloud`."""
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    body = [
        f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}"
        for (x, y, z), (r, g, b) in zip(cloud.xyz.tolist(), cloud.rgb.tolist())
    ]
    Path(path).write_text("\n".join(header + body) + "\n")


_PGM_VALUES = {CellState.OCCUPIED: 0, CellState.FREE: 254, CellState.UNKNOWN: 205}


def save_map(grid: OccupancyGrid, path: Path) -> None:
    """Write `<path>.pgm` plus a `<path>.json` sidecar (origin, resolution)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    gray = np.zeros(grid.cells.shape, dtype=np.uint8)
    for state, value in _PGM_VALUES.items():
        gray[grid.cells == state] = value
    Image.fromarray(gray).save(path.with_suffix(".pgm"))
    sidecar = {
        "origin": [grid.origin[0], grid.origin[1]],
        "resolution": grid.resolution,
        "rows": grid.rows,
        "cols": grid.cols,
        "values": {s.name.lower(): v for s, v in _PGM_VALUES.items()},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_map(path: Path) -> OccupancyGrid:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    with Image.open(path.with_suffix(".pgm")) as img:
        gray = np.asarray(img, dtype=np.uint8)
    cells = np.full(gray.shape, CellState.UNKNOWN, dtype=np.int8)
    cells[gray == _PGM_VALUES[CellState.OCCUPIED]] = CellState.OCCUPIED
    cells[gray == _PGM_VALUES[CellState.FREE]] = CellState.FREE
    return OccupancyGrid(tuple(sidecar["origin"]), sidecar["resolution"], cells)
