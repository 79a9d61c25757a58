"""Procedural stand-in for real capture.

Rooms are grids of square cells; blocked cells are full-height boxes. Every
wall face between free space and a box or the outer boundary becomes a
textured segment. Panoramas are rendered by 2.5D raycasting against those
segments, and synthetic point clouds are sampled from the same geometry so
the acquisition pipeline can be checked against ground truth.

World frame: x grows East (with column), y grows South (with row), azimuth
0° is North and increases clockwise.
"""
import json
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import Field, validator

from .config import BaseModel, PerceptionSettings, PipelineSettings
from .exceptions import GenerationError, PipelineError, RenderError
from .perception import crop_view, is_featureful
from .pipeline import (
    HeightBand,
    PointCloud,
    SampledLocation,
    build_laserscan_map,
    build_obstacle_map,
    sample_grid_locations,
    save_map,
    traversal_plan,
)
from .scene import (
    STANDARD_CELL_SIZES,
    GridScene,
    Heading,
    LocationRecord,
    SceneCategory,
    TargetRef,
    save_scene,
)

RGB = Tuple[int, int, int]


class TextureKind(Enum):
    PLAIN = "plain"
    SOLID = "solid"
    STRIPES = "stripes"
    CHECKER = "checker"


class TextureSpec(BaseModel):
    kind: TextureKind
    color: RGB
    alt_color: RGB = (255, 255, 255)
    period: float = Field(0.25, gt=0, description="Pattern period in meters")

    @property
    def featureless(self) -> bool:
        return self.kind is TextureKind.PLAIN


DEFAULT_PALETTE: Tuple[TextureSpec, ...] = (
    TextureSpec(kind=TextureKind.PLAIN, color=(200, 196, 186)),
    TextureSpec(kind=TextureKind.CHECKER, color=(30, 60, 150), alt_color=(235, 235, 225), period=0.25),
    TextureSpec(kind=TextureKind.CHECKER, color=(40, 120, 50), alt_color=(240, 220, 90), period=0.3),
    TextureSpec(kind=TextureKind.STRIPES, color=(170, 40, 40), alt_color=(245, 245, 245), period=0.2),
    TextureSpec(kind=TextureKind.STRIPES, color=(90, 60, 30), alt_color=(210, 170, 110), period=0.15),
    TextureSpec(kind=TextureKind.CHECKER, color=(120, 40, 130), alt_color=(200, 230, 240), period=0.2),
)

FLOOR_COLOR: RGB = (110, 100, 90)
CEILING_COLOR: RGB = (225, 225, 230)


class ProcGenSpec(BaseModel):
    rows: int = Field(6, ge=2)
    cols: int = Field(8, ge=2)
    cell_size: float = Field(0.5, gt=0)
    obstacle_density: float = Field(0.1, ge=0)
    texture_palette: Tuple[TextureSpec, ...] = DEFAULT_PALETTE
    seed: int = Field(0, ge=0, lt=2**64)
    category: SceneCategory = SceneCategory.OFFICE
    split: str = "train"
    wall_height: float = Field(2.0, gt=0)
    camera_height: float = Field(1.0, gt=0)
    max_retries: int = Field(50, ge=1)

    @validator("obstacle_density")
    def _density_below_half(cls, v: float) -> float:
        if v >= 0.5:
            raise ValueError("obstacle_density must be < 0.5")
        return v

    @validator("texture_palette")
    def _palette_has_plain(cls, v: Tuple[TextureSpec, ...]) -> Tuple[TextureSpec, ...]:
        if not any(t.featureless for t in v):
            raise ValueError("texture_palette needs a plain (texture-less) texture")
        if all(t.featureless for t in v):
            raise ValueError("texture_palette needs at least one patterned texture")
        return v

    @property
    def scene_id(self) -> str:
        return f"{self.category.value}-{self.seed:04d}"


# rows, cols, obstacle density
PRESETS: Dict[SceneCategory, Tuple[int, int, float]] = {
    SceneCategory.OFFICE: (6, 8, 0.10),
    SceneCategory.CONFERENCE: (8, 10, 0.12),
    SceneCategory.OPEN: (10, 12, 0.05),
    SceneCategory.KITCHEN: (12, 12, 0.15),
    SceneCategory.STORAGE: (6, 6, 0.25),
}

# (category, train count, test count), mirroring the captured dataset's split.
CORPUS_MIX: Tuple[Tuple[SceneCategory, int, int], ...] = (
    (SceneCategory.OFFICE, 10, 5),
    (SceneCategory.CONFERENCE, 3, 2),
    (SceneCategory.OPEN, 1, 1),
    (SceneCategory.KITCHEN, 0, 1),
    (SceneCategory.STORAGE, 1, 0),
)


def preset_spec(category: "SceneCategory | str", seed: int, **overrides) -> ProcGenSpec:
    category = SceneCategory(category)
    rows, cols, density = PRESETS[category]
    values = dict(rows=rows, cols=cols, obstacle_density=density, seed=seed, category=category)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ProcGenSpec(**values)


def corpus_plan(seeds: Sequence[int]) -> List[ProcGenSpec]:
    """Specs cycling through the 15 office / 5 conference / 2 open / 1 kitchen /
    1 storage mix, train scenes first (15) then test scenes (9)."""
    slots: List[Tuple[SceneCategory, str]] = []
    for split, column in (("train", 1), ("test", 2)):
        for entry in CORPUS_MIX:
            slots.extend([(entry[0], split)] * entry[column])
    return [
        preset_spec(slots[i % len(slots)][0], seed, split=slots[i % len(slots)][1])
        for i, seed in enumerate(seeds)
    ]


@dataclass(frozen=True, eq=False)
class SceneGeometry:
    """Wall segments and the cell mask they were built from.

    Segments run clockwise around free space: seen from the free side, `p0`
    is the left end. `u_offset` makes texture coordinates continue across
    segments of one wall run.
    """

    p0: np.ndarray
    p1: np.ndarray
    texture_ids: np.ndarray
    u_offset: np.ndarray
    palette: Tuple[TextureSpec, ...]
    bounds: Tuple[Tuple[float, float], Tuple[float, float]]
    free_mask: Optional[np.ndarray] = None
    cell_size: float = 0.5
    wall_height: float = 2.0
    camera_height: float = 1.0
    floor_color: RGB = FLOOR_COLOR
    ceiling_color: RGB = CEILING_COLOR

    def __post_init__(self) -> None:
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "texture_ids", np.asarray(self.texture_ids, dtype=np.int64))
        object.__setattr__(self, "u_offset", np.asarray(self.u_offset, dtype=np.float64))

    @property
    def num_segments(self) -> int:
        return len(self.p0)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.p1 - self.p0, axis=1)

    def featureless_segments(self) -> np.ndarray:
        plain = [i for i, t in enumerate(self.palette) if t.featureless]
        return np.flatnonzero(np.isin(self.texture_ids, plain))

    def is_free(self, x: float, y: float) -> bool:
        if self.free_mask is None:
            (x0, y0), (x1, y1) = self.bounds
            return x0 < x < x1 and y0 < y < y1
        row = int(np.floor(y / self.cell_size))
        col = int(np.floor(x / self.cell_size))
        rows, cols = self.free_mask.shape
        return 0 <= row < rows and 0 <= col < cols and bool(self.free_mask[row, col])

    def rotated(self, center: Tuple[float, float], quarter_turns: int = 1) -> "SceneGeometry":
        """Geometry rotated clockwise (in azimuth) by 90° steps about `center`.

        The cell mask is dropped, free space is then judged by the bounds.
        """
        c = np.asarray(center, dtype=np.float64)
        p0, p1 = self.p0 - c, self.p1 - c
        lo, hi = np.asarray(self.bounds[0]) - c, np.asarray(self.bounds[1]) - c
        corners = np.array([lo, hi, [lo[0], hi[1]], [hi[0], lo[1]]])
        for _ in range(quarter_turns % 4):
            p0 = np.stack([-p0[:, 1], p0[:, 0]], axis=1)
            p1 = np.stack([-p1[:, 1], p1[:, 0]], axis=1)
            corners = np.stack([-corners[:, 1], corners[:, 0]], axis=1)
        corners = corners + c
        bounds = (
            (float(corners[:, 0].min()), float(corners[:, 1].min())),
            (float(corners[:, 0].max()), float(corners[:, 1].max())),
        )
        return replace(self, p0=p0 + c, p1=p1 + c, bounds=bounds, free_mask=None)


def _is_connected(free: np.ndarray) -> bool:
    cells = np.argwhere(free)
    if not len(cells):
        return False
    start = tuple(cells[0])
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
            nr, nc = r + dr, c + dc
            if (
                0 <= nr < free.shape[0]
                and 0 <= nc < free.shape[1]
                and free[nr, nc]
                and (nr, nc) not in seen
            ):
                seen.add((nr, nc))
                queue.append((nr, nc))
    return len(seen) == len(cells)


# facing (direction from free cell toward the wall) -> endpoints of the face of
# cell (r, c) in cell units, clockwise as seen from inside.
_FACES = {
    Heading.N: lambda r, c: ((c, r), (c + 1, r)),
    Heading.E: lambda r, c: ((c + 1, r), (c + 1, r + 1)),
    Heading.S: lambda r, c: ((c + 1, r + 1), (c, r + 1)),
    Heading.W: lambda r, c: ((c, r + 1), (c, r)),
}


def _wall_runs(free: np.ndarray) -> List[Tuple[Heading, List[Tuple[int, int]]]]:
    """Group wall faces into maximal straight runs sharing a facing."""
    rows, cols = free.shape
    faces: Dict[Tuple[Heading, int], List[int]] = {}
    for r, c in zip(*np.nonzero(free)):
        for heading in Heading:
            dr, dc = heading.offset
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols and free[nr, nc]:
                continue
            if heading in (Heading.N, Heading.S):
                faces.setdefault((heading, int(r)), []).append(int(c))
            else:
                faces.setdefault((heading, int(c)), []).append(int(r))
    runs = []
    for (heading, line), along in sorted(faces.items()):
        along.sort()
        # Clockwise order: N runs west->east, E north->south, S and W reversed.
        reverse = heading in (Heading.S, Heading.W)
        current = [along[0]]
        for k in along[1:]:
            if k == current[-1] + 1:
                current.append(k)
            else:
                runs.append((heading, line, current[::-1] if reverse else current))
                current = [k]
        runs.append((heading, line, current[::-1] if reverse else current))
    out = []
    for heading, line, cells in runs:
        if heading in (Heading.N, Heading.S):
            out.append((heading, [(line, k) for k in cells]))
        else:
            out.append((heading, [(k, line) for k in cells]))
    return out


def generate_geometry(spec: ProcGenSpec) -> SceneGeometry:
    """Random room with box obstacles. Deterministic in `spec.seed`."""
    for attempt in range(spec.max_retries):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, attempt]))
        free = rng.random((spec.rows, spec.cols)) >= spec.obstacle_density
        if _is_connected(free):
            break
        logger.debug("{}: attempt {} not connected, retrying", spec.scene_id, attempt)
    else:
        raise GenerationError(
            f"{spec.scene_id}: free space not connected after {spec.max_retries} attempts"
        )

    runs = _wall_runs(free)
    patterned = [i for i, t in enumerate(spec.texture_palette) if not t.featureless]
    plain = next(i for i, t in enumerate(spec.texture_palette) if t.featureless)
    # The longest outer wall run stays texture-less.
    outer = [
        k
        for k, (heading, cells) in enumerate(runs)
        if _on_boundary(heading, cells[0], free.shape)
    ]
    featureless_run = max(outer, key=lambda k: (len(runs[k][1]), -k))

    p0, p1, tex, uoff = [], [], [], []
    s = spec.cell_size
    for k, (heading, cells) in enumerate(runs):
        texture = plain if k == featureless_run else int(rng.choice(patterned))
        start_u = float(rng.uniform(0, 1))
        a0, _ = _FACES[heading](*cells[0])
        _, a1 = _FACES[heading](*cells[-1])
        p0.append((a0[0] * s, a0[1] * s))
        p1.append((a1[0] * s, a1[1] * s))
        tex.append(texture)
        uoff.append(start_u)
    rows, cols = free.shape
    geom = SceneGeometry(
        p0=np.array(p0),
        p1=np.array(p1),
        texture_ids=np.array(tex),
        u_offset=np.array(uoff),
        palette=tuple(spec.texture_palette),
        bounds=((0.0, 0.0), (cols * s, rows * s)),
        free_mask=free,
        cell_size=s,
        wall_height=spec.wall_height,
        camera_height=spec.camera_height,
    )
    logger.debug(
        "{}: {} free cells, {} wall segments",
        spec.scene_id,
        int(free.sum()),
        geom.num_segments,
    )
    return geom


def _on_boundary(heading: Heading, cell: Tuple[int, int], shape: Tuple[int, int]) -> bool:
    dr, dc = heading.offset
    r, c = cell[0] + dr, cell[1] + dc
    return not (0 <= r < shape[0] and 0 <= c < shape[1])


def box_room(
    width: float,
    height: float,
    textures: Sequence[int],
    palette: Sequence[TextureSpec] = DEFAULT_PALETTE,
    **kwargs,
) -> SceneGeometry:
    """Empty rectangular room [0, width] x [0, height] with one texture per
    wall in N, E, S, W order."""
    p0 = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]
    p1 = [(width, 0.0), (width, height), (0.0, height), (0.0, 0.0)]
    return SceneGeometry(
        p0=np.array(p0),
        p1=np.array(p1),
        texture_ids=np.array(list(textures)),
        u_offset=np.zeros(4),
        palette=tuple(palette),
        bounds=((0.0, 0.0), (width, height)),
        **kwargs,
    )


def texture_colors(
    palette: Sequence[TextureSpec], texture_ids: np.ndarray, u: np.ndarray, z: np.ndarray
) -> np.ndarray:
    """RGB float colors (..., 3) in [0, 255] of wall points at (u, z)."""
    out = np.zeros(texture_ids.shape + (3,), dtype=np.float64)
    for tid in np.unique(texture_ids):
        spec = palette[int(tid)]
        mask = texture_ids == tid
        base = np.asarray(spec.color, dtype=np.float64)
        alt = np.asarray(spec.alt_color, dtype=np.float64)
        if spec.kind in (TextureKind.PLAIN, TextureKind.SOLID):
            out[mask] = base
            continue
        uu = np.floor(u[mask] / spec.period).astype(np.int64)
        if spec.kind is TextureKind.STRIPES:
            parity = uu % 2
        else:
            parity = (uu + np.floor(z[mask] / spec.period).astype(np.int64)) % 2
        out[mask] = np.where(parity[:, None] == 0, base, alt)
    return out


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def ray_directions(width: int) -> np.ndarray:
    """Unit (dx, dy) per panorama column; column c looks at azimuth 360°·c/width.

    When `width` is divisible by 4 the last three quarters are exact 90°
    rotations of the first, so renders are exactly equivariant to quarter
    turns.
    """
    if width % 4:
        theta = 2 * np.pi * np.arange(width) / width
        return np.stack([np.sin(theta), -np.cos(theta)], axis=1)
    q = width // 4
    theta = 2 * np.pi * np.arange(q) / width
    quarter = np.stack([np.sin(theta), -np.cos(theta)], axis=1)
    parts = [quarter]
    for _ in range(3):
        prev = parts[-1]
        parts.append(np.stack([-prev[:, 1], prev[:, 0]], axis=1))
    return np.concatenate(parts)


def cast_rays(
    geom: SceneGeometry, position: Tuple[float, float], directions: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest wall hit per ray: (distance, segment index, texture u)."""
    origin = np.asarray(position, dtype=np.float64)
    edge = geom.p1 - geom.p0
    w = geom.p0 - origin
    denom = _cross(directions[:, None, :], edge[None, :, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(w, edge)[None, :] / denom
        s = _cross(w[None, :, :], directions[:, None, :]) / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= -1e-9) & (s <= 1 + 1e-9)
    t = np.where(valid, t, np.inf)
    seg = np.argmin(t, axis=1)
    cols = np.arange(len(directions))
    dist = t[cols, seg]
    if not np.all(np.isfinite(dist)):
        raise RenderError(f"Rays escape the geometry at {tuple(position)}", "leaky-geometry")
    u = np.clip(s[cols, seg], 0.0, 1.0) * geom.lengths[seg] + geom.u_offset[seg]
    return dist, seg, u


def _distance_to_segments(geom: SceneGeometry, point: np.ndarray) -> float:
    if not geom.num_segments:
        return np.inf
    edge = geom.p1 - geom.p0
    lengths2 = np.maximum((edge**2).sum(axis=1), 1e-18)
    s = np.clip(((point - geom.p0) * edge).sum(axis=1) / lengths2, 0, 1)
    closest = geom.p0 + s[:, None] * edge
    return float(np.min(np.linalg.norm(closest - point, axis=1)))


def render_panorama(
    geom: SceneGeometry,
    position: Tuple[float, float],
    pano_w: int = 512,
    pano_h: int = 128,
    vfov: float = 90.0,
    shading: float = 0.25,
) -> np.ndarray:
    """Cylindrical 360° panorama (uint8, pano_h x pano_w x 3) seen from `position`.

    Projected wall height is proportional to 1 / horizontal distance; walls
    are darkened by ``1 / (1 + shading * distance)``.
    """
    point = np.asarray(position, dtype=np.float64)
    if not geom.is_free(*point) or _distance_to_segments(geom, point) < 1e-6:
        raise RenderError(f"Position {tuple(position)} is inside a wall")
    dist, seg, u = cast_rays(geom, point, ray_directions(pano_w))

    tan_half = np.tan(np.radians(vfov) / 2)
    # tan(elevation) per row, top row first
    elev = (1 - 2 * (np.arange(pano_h) + 0.5) / pano_h) * tan_half
    top = (geom.wall_height - geom.camera_height) / dist
    bottom = -geom.camera_height / dist
    above = elev[:, None] > top[None, :]
    below = elev[:, None] < bottom[None, :]
    wall = ~(above | below)

    z = geom.camera_height + elev[:, None] * dist[None, :]
    tex = np.broadcast_to(geom.texture_ids[seg][None, :], wall.shape)
    uu = np.broadcast_to(u[None, :], wall.shape)
    colors = texture_colors(geom.palette, tex[wall], uu[wall], z[wall])
    shade = np.broadcast_to((1.0 / (1.0 + shading * dist))[None, :], wall.shape)[wall]

    image = np.empty((pano_h, pano_w, 3), dtype=np.float64)
    image[above] = geom.ceiling_color
    image[below] = geom.floor_color
    image[wall] = colors * shade[:, None]
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def synthesize_point_cloud(
    geom: SceneGeometry,
    samples_per_m2: float = 400.0,
    floor_samples_per_m2: float = 1600.0,
    seed: int = 0,
) -> PointCloud:
    """Colored points on every wall surface plus the floor of free cells.

    Wall points are stratified along each segment (exactly
    ``round(area * samples_per_m2)`` per segment); floor points form a
    jittered grid inside each free cell.
    """
    if samples_per_m2 <= 0 or floor_samples_per_m2 <= 0:
        raise PipelineError("Point densities must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    xyz_parts, rgb_parts = [], []
    lengths = geom.lengths
    for k in range(geom.num_segments):
        n = int(np.rint(lengths[k] * geom.wall_height * samples_per_m2))
        if n == 0:
            continue
        t = (np.arange(n) + rng.random(n)) / n
        z = rng.random(n) * geom.wall_height
        xy = geom.p0[k] + t[:, None] * (geom.p1[k] - geom.p0[k])
        u = t * lengths[k] + geom.u_offset[k]
        tex = np.full(n, geom.texture_ids[k])
        xyz_parts.append(np.column_stack([xy, z]))
        rgb_parts.append(texture_colors(geom.palette, tex, u, z))
    if geom.free_mask is not None:
        per_side = max(1, int(np.rint(geom.cell_size * np.sqrt(floor_samples_per_m2))))
        step = geom.cell_size / per_side
        gi, gj = np.mgrid[0:per_side, 0:per_side]
        for r, c in zip(*np.nonzero(geom.free_mask)):
            jitter = rng.random((per_side, per_side, 2))
            x = c * geom.cell_size + (gj + jitter[..., 0]) * step
            y = r * geom.cell_size + (gi + jitter[..., 1]) * step
            pts = np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])
            xyz_parts.append(pts)
            rgb_parts.append(np.tile(np.asarray(geom.floor_color, dtype=np.float64), (x.size, 1)))
    if not xyz_parts:
        return PointCloud.empty()
    return PointCloud(
        np.concatenate(xyz_parts),
        np.clip(np.rint(np.concatenate(rgb_parts)), 0, 255).astype(np.uint8),
    )


def rasterize_geometry(
    geom: SceneGeometry,
    origin: Tuple[float, float],
    resolution: float,
    rows: int,
    cols: int,
) -> np.ndarray:
    """Ground-truth wall footprint: cells crossed by any wall segment."""
    mask = np.zeros((rows, cols), dtype=bool)
    for k in range(geom.num_segments):
        n = max(1, int(np.ceil(geom.lengths[k] / resolution)) * 8)
        t = (np.arange(n) + 0.5) / n
        xy = geom.p0[k] + t[:, None] * (geom.p1[k] - geom.p0[k])
        col = np.floor((xy[:, 0] - origin[0]) / resolution).astype(np.int64)
        row = np.floor((xy[:, 1] - origin[1]) / resolution).astype(np.int64)
        inside = (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
        mask[row[inside], col[inside]] = True
    return mask


def select_landmarks(
    positions: Sequence[Tuple[float, float]],
    featureful: Sequence[TargetRef],
    count: int,
    rng: np.random.Generator,
) -> List[TargetRef]:
    """Spread-out subset of `featureful` by farthest-point sampling."""
    if not featureful or count <= 0:
        return []
    pts = np.array([positions[t.location_id] for t in featureful])
    chosen = [int(rng.integers(len(featureful)))]
    best = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    while len(chosen) < min(count, len(featureful)):
        nxt = int(np.argmax(best))
        if best[nxt] <= 0:
            remaining = [i for i in range(len(featureful)) if i not in chosen]
            nxt = remaining[0]
        chosen.append(nxt)
        best = np.minimum(best, np.linalg.norm(pts - pts[nxt], axis=1))
    return [featureful[i] for i in sorted(chosen)]


def landmark_count(num_locations: int) -> int:
    return int(np.clip(round(num_locations / 8), 5, 10))


def _choose_locations(
    obstacle, geom: SceneGeometry, grid_size: float, clearance: float
) -> List[SampledLocation]:
    """Lattice sampling from the start whose reachable set is largest.

    Candidate starts are the interior cell corners, tried in row-major order.
    """
    (x0, y0), (x1, y1) = geom.bounds
    best: List[SampledLocation] = []
    covered = set()
    for i in range(1, int(round((y1 - y0) / grid_size))):
        for j in range(1, int(round((x1 - x0) / grid_size))):
            start = (x0 + j * grid_size, y0 + i * grid_size)
            if (round(start[0], 6), round(start[1], 6)) in covered:
                continue
            try:
                found = sample_grid_locations(obstacle, start, grid_size, clearance)
            except PipelineError:
                continue
            covered.update((round(p.x, 6), round(p.y, 6)) for p in found)
            if len(found) > len(best):
                best = found
    if not best:
        raise PipelineError("No lattice node has the required clearance", "start-blocked")
    return best


@dataclass
class BuildSettings:
    """Knobs of `build_scene_package` beyond the ProcGenSpec."""

    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    perception: PerceptionSettings = field(default_factory=PerceptionSettings)
    pano_width: int = 512
    pano_height: int = 128
    samples_per_m2: float = 400.0
    floor_samples_per_m2: float = 1600.0
    workers: int = 1


def build_scene_package(
    spec: ProcGenSpec, package_path: Path, settings: Optional[BuildSettings] = None
) -> GridScene:
    """Generate, scan, sample, render and save one synthetic scene package.

    Besides the scene package proper, `maps/` receives the obstacle and
    laser-scan maps and `plan.json` the capture traversal plan.
    """
    settings = settings or BuildSettings()
    pipe = settings.pipeline
    package_path = Path(package_path)
    geom = generate_geometry(spec)
    cloud = synthesize_point_cloud(
        geom, settings.samples_per_m2, settings.floor_samples_per_m2, seed=spec.seed
    )
    bounds = geom.bounds
    obstacle = build_obstacle_map(
        cloud, HeightBand(pipe.z_min, pipe.z_max), pipe.resolution, pipe.min_points, bounds
    )
    laserscan = build_laserscan_map(
        cloud, pipe.sensor_height, pipe.slab_thickness, pipe.resolution, pipe.min_points, bounds
    )
    locations = _choose_locations(obstacle, geom, pipe.grid_size, pipe.clearance)
    plan = traversal_plan(locations)

    def render(loc: SampledLocation) -> np.ndarray:
        return render_panorama(geom, (loc.x, loc.y), settings.pano_width, settings.pano_height)

    with ThreadPoolExecutor(max_workers=max(1, settings.workers)) as pool:
        panoramas = list(pool.map(render, locations))

    records = tuple(
        LocationRecord(k, loc.row, loc.col, pano)
        for k, (loc, pano) in enumerate(zip(locations, panoramas))
    )
    origin_loc = min(locations, key=lambda p: (p.row, p.col))
    origin = (
        origin_loc.x - origin_loc.col * pipe.grid_size,
        origin_loc.y - origin_loc.row * pipe.grid_size,
    )
    percep = settings.perception
    featureful = [
        TargetRef(rec.id, heading)
        for rec in records
        for heading in Heading
        if is_featureful(
            crop_view(rec.panorama, heading, percep.hfov, (percep.view_width, percep.view_height)),
            percep.min_keypoints,
            percep.harris_k,
            percep.harris_threshold,
        )
    ]
    positions = [(loc.x, loc.y) for loc in locations]
    landmarks = select_landmarks(
        positions,
        featureful,
        landmark_count(len(records)),
        np.random.default_rng(np.random.SeedSequence([spec.seed, 11])),
    )
    scene = GridScene(
        scene_id=spec.scene_id,
        rows=max(loc.row for loc in locations) + 1,
        cols=max(loc.col for loc in locations) + 1,
        cell_size=pipe.grid_size,
        free_cells=frozenset((loc.row, loc.col) for loc in locations),
        locations=records,
        landmark_targets=tuple(landmarks),
        featureful_targets=tuple(featureful),
        origin=origin,
        category=spec.category,
        split=spec.split,
        custom_cell_size=not any(abs(pipe.grid_size - s) < 1e-9 for s in STANDARD_CELL_SIZES),
    )
    save_scene(scene, package_path)
    save_map(obstacle, package_path / "maps" / "obstacle")
    save_map(laserscan, package_path / "maps" / "laserscan")
    (package_path / "plan.json").write_text(
        json.dumps(
            {
                "locations": [[loc.row, loc.col, loc.x, loc.y] for loc in locations],
                "traversal": plan,
            },
            indent=2,
        )
        + "\n"
    )
    logger.info(
        "Built {}: {} locations, {} featureful views, {} landmarks",
        scene.scene_id,
        scene.num_locations,
        len(featureful),
        len(landmarks),
    )
    return scene
