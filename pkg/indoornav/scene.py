"""Scene model: the in-memory GridScene and the on-disk scene package.

A scene package is a directory holding a `manifest.json` and one PNG
panorama per location under `pano/<id>.png`::

    office-0001/
        manifest.json
        pano/0.png
        pano/1.png
        ...
"""
import json
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import (
    Callable,
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from loguru import logger
from PIL import Image
from pydantic import Field, ValidationError
from rich.table import Table

from .config import BaseModel
from .exceptions import SceneError

MANIFEST_NAME = "manifest.json"
PANO_DIR = "pano"
MANIFEST_VERSION = 1
STANDARD_CELL_SIZES = (0.4, 0.5)
REFERENCE_DATASET = Path(__file__).parent / "data" / "reference_dataset.json"

Cell = Tuple[int, int]


class Heading(IntEnum):
    """Compass heading. Azimuth 0° is North, the -row direction."""

    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def offset(self) -> Cell:
        """(drow, dcol) of one lattice step along this heading."""
        return _HEADING_OFFSETS[self]

    @property
    def azimuth(self) -> float:
        return 90.0 * int(self)

    def turn_left(self) -> "Heading":
        return Heading((int(self) - 1) % 4)

    def turn_right(self) -> "Heading":
        return Heading((int(self) + 1) % 4)

    @classmethod
    def parse(cls, value: "str | int | Heading") -> "Heading":
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise SceneError(f"Unknown heading {value!r}") from None
        return cls(value)


_HEADING_OFFSETS = {
    Heading.N: (-1, 0),
    Heading.E: (0, 1),
    Heading.S: (1, 0),
    Heading.W: (0, -1),
}


class Action(IntEnum):
    MOVE_FORWARD = 0
    MOVE_BACKWARD = 1
    TURN_LEFT = 2
    TURN_RIGHT = 3

    @property
    def inverse(self) -> "Action":
        return _INVERSE_ACTIONS[self]


_INVERSE_ACTIONS = {
    Action.MOVE_FORWARD: Action.MOVE_BACKWARD,
    Action.MOVE_BACKWARD: Action.MOVE_FORWARD,
    Action.TURN_LEFT: Action.TURN_RIGHT,
    Action.TURN_RIGHT: Action.TURN_LEFT,
}


class SceneCategory(Enum):
    OFFICE = "office"
    CONFERENCE = "conference"
    OPEN = "open"
    KITCHEN = "kitchen"
    STORAGE = "storage"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class AgentState:
    location_id: int
    heading: Heading

    def __str__(self) -> str:
        return f"{self.location_id}{self.heading.name}"


@dataclass(frozen=True)
class TargetRef:
    """A goal view: a location seen under one heading."""

    location_id: int
    heading: Heading

    @property
    def state(self) -> AgentState:
        return AgentState(self.location_id, self.heading)

    @classmethod
    def from_state(cls, state: AgentState) -> "TargetRef":
        return cls(state.location_id, state.heading)

    def __str__(self) -> str:
        return f"{self.location_id}{self.heading.name}"


@dataclass(frozen=True, eq=False)
class LocationRecord:
    id: int
    row: int
    col: int
    panorama: np.ndarray = field(repr=False)
    """uint8 array of shape (height, width, 3)."""

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LocationRecord):
            return NotImplemented
        return (
            (self.id, self.row, self.col) == (other.id, other.row, other.col)
            and self.panorama.shape == other.panorama.shape
            and bool(np.array_equal(self.panorama, other.panorama))
        )

    def __hash__(self) -> int:
        return hash((self.id, self.row, self.col))


@dataclass(frozen=True, eq=False)
class GridScene:
    """Immutable grid scene. Safe to share read-only across threads."""

    scene_id: str
    rows: int
    cols: int
    cell_size: float
    free_cells: FrozenSet[Cell]
    locations: Tuple[LocationRecord, ...]
    landmark_targets: Tuple[TargetRef, ...] = ()
    featureful_targets: Tuple[TargetRef, ...] = ()
    origin: Tuple[float, float] = (0.0, 0.0)
    category: SceneCategory = SceneCategory.OFFICE
    split: str = "train"
    custom_cell_size: bool = False
    _index: Dict[Cell, int] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        object.__setattr__(self, "free_cells", frozenset(self.free_cells))
        object.__setattr__(self, "locations", tuple(self.locations))
        object.__setattr__(self, "landmark_targets", tuple(self.landmark_targets))
        object.__setattr__(self, "featureful_targets", tuple(self.featureful_targets))
        self._validate()
        self._index.update({(loc.row, loc.col): loc.id for loc in self.locations})

    def _validate(self) -> None:
        def fail(msg: str) -> None:
            raise SceneError(f"{self.scene_id}: {msg}", "invalid-scene")

        if self.rows < 1 or self.cols < 1:
            fail(f"bad lattice size {self.rows}x{self.cols}")
        if not self.custom_cell_size and not any(
            abs(self.cell_size - s) < 1e-9 for s in STANDARD_CELL_SIZES
        ):
            fail(f"cell_size {self.cell_size} not in {STANDARD_CELL_SIZES}")
        for r, c in self.free_cells:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                fail(f"free cell {(r, c)} outside lattice")
        seen = set()
        shape = None
        for i, loc in enumerate(self.locations):
            if loc.id != i:
                fail(f"location ids must be dense 0..N-1, got {loc.id} at {i}")
            if (loc.row, loc.col) not in self.free_cells:
                fail(f"location {loc.id} at {(loc.row, loc.col)} is not a free cell")
            if (loc.row, loc.col) in seen:
                fail(f"two locations share cell {(loc.row, loc.col)}")
            seen.add((loc.row, loc.col))
            if loc.panorama.ndim != 3 or loc.panorama.shape[2] != 3:
                fail(f"panorama {loc.id} has shape {loc.panorama.shape}")
            if shape is None:
                shape = loc.panorama.shape
            elif loc.panorama.shape != shape:
                fail(f"panorama {loc.id} has shape {loc.panorama.shape} != {shape}")
        n = len(self.locations)
        for target in (*self.landmark_targets, *self.featureful_targets):
            if not 0 <= target.location_id < n:
                fail(f"target {target} names unknown location")
            if not isinstance(target.heading, Heading):
                fail(f"target {target} has no valid heading")
        missing = set(self.landmark_targets) - set(self.featureful_targets)
        if missing:
            fail(f"landmark targets not featureful: {sorted(map(str, missing))}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridScene):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and (self.rows, self.cols) == (other.rows, other.cols)
            and self.cell_size == other.cell_size
            and self.free_cells == other.free_cells
            and self.locations == other.locations
            and self.landmark_targets == other.landmark_targets
            and self.featureful_targets == other.featureful_targets
            and tuple(self.origin) == tuple(other.origin)
            and self.category == other.category
            and self.split == other.split
            and self.custom_cell_size == other.custom_cell_size
        )

    def __hash__(self) -> int:
        return hash((self.scene_id, self.rows, self.cols, len(self.locations)))

    @property
    def num_locations(self) -> int:
        return len(self.locations)

    @property
    def num_states(self) -> int:
        return 4 * len(self.locations)

    @property
    def pano_size(self) -> Tuple[int, int]:
        """(width, height) of the panoramas, (0, 0) for an empty scene."""
        if not self.locations:
            return (0, 0)
        h, w, _ = self.locations[0].panorama.shape
        return (w, h)

    def location_at(self, row: int, col: int) -> Optional[int]:
        return self._index.get((row, col))

    def neighbor(self, location_id: int, heading: Heading) -> Optional[int]:
        """Location one lattice step from `location_id` along `heading`."""
        loc = self.locations[location_id]
        dr, dc = heading.offset
        return self._index.get((loc.row + dr, loc.col + dc))

    def position(self, location_id: int) -> Tuple[float, float]:
        """World (x, y) in meters; x grows with col, y with row."""
        loc = self.locations[location_id]
        return (
            self.origin[0] + loc.col * self.cell_size,
            self.origin[1] + loc.row * self.cell_size,
        )

    def states(self) -> Iterator[AgentState]:
        for loc in self.locations:
            for heading in Heading:
                yield AgentState(loc.id, heading)

    def is_valid_state(self, state: AgentState) -> bool:
        return 0 <= state.location_id < len(self.locations)

    @staticmethod
    def state_index(state: AgentState) -> int:
        return 4 * state.location_id + int(state.heading)

    @staticmethod
    def index_state(index: int) -> AgentState:
        return AgentState(index // 4, Heading(index % 4))

    def panorama(self, location_id: int) -> np.ndarray:
        return self.locations[location_id].panorama


def with_targets(
    scene: GridScene,
    landmark_targets: Iterable[TargetRef],
    featureful_targets: Iterable[TargetRef],
) -> GridScene:
    return replace(
        scene,
        landmark_targets=tuple(landmark_targets),
        featureful_targets=tuple(featureful_targets),
    )


def scene_from_mask(
    mask: np.ndarray,
    scene_id: str = "mask-scene",
    cell_size: float = 0.5,
    pano_size: Tuple[int, int] = (64, 16),
    panorama_fn: Optional[Callable[[int, int, int], np.ndarray]] = None,
    seed: int = 0,
    **kwargs,
) -> GridScene:
    """Build a scene with one location per free cell of a boolean mask.

    Locations are numbered in row-major order. Without `panorama_fn` each
    location gets a seeded uniform-noise panorama, which makes every view
    distinct.
    """
    mask = np.asarray(mask, dtype=bool)
    rng = np.random.default_rng(seed)
    width, height = pano_size
    locations = []
    for i, (r, c) in enumerate(zip(*np.nonzero(mask))):
        if panorama_fn is None:
            pano = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        else:
            pano = np.asarray(panorama_fn(i, int(r), int(c)), dtype=np.uint8)
        locations.append(LocationRecord(i, int(r), int(c), pano))
    free = frozenset((int(r), int(c)) for r, c in zip(*np.nonzero(mask)))
    return GridScene(
        scene_id=scene_id,
        rows=mask.shape[0],
        cols=mask.shape[1],
        cell_size=cell_size,
        free_cells=free,
        locations=tuple(locations),
        **kwargs,
    )


class _TargetModel(BaseModel):
    location_id: int
    heading: str


class _LocationModel(BaseModel):
    id: int
    row: int
    col: int


class _PanoramaModel(BaseModel):
    width: int
    height: int


class SceneManifest(BaseModel):
    """On-disk manifest. Field order and sorting are fixed for byte-stable output."""

    version: int
    scene_id: str
    category: SceneCategory = SceneCategory.OFFICE
    split: str = "train"
    rows: int
    cols: int
    cell_size: float
    custom_cell_size: bool = False
    origin: Tuple[float, float] = (0.0, 0.0)
    panorama: _PanoramaModel
    free_cells: List[Tuple[int, int]] = Field(default_factory=list)
    locations: List[_LocationModel] = Field(default_factory=list)
    landmark_targets: List[_TargetModel] = Field(default_factory=list)
    featureful_targets: List[_TargetModel] = Field(default_factory=list)


def _target_models(targets: Sequence[TargetRef]) -> List[Dict[str, object]]:
    return [{"location_id": t.location_id, "heading": t.heading.name} for t in targets]


def _manifest_dict(scene: GridScene) -> Dict[str, object]:
    width, height = scene.pano_size
    return {
        "version": MANIFEST_VERSION,
        "scene_id": scene.scene_id,
        "category": scene.category.value,
        "split": scene.split,
        "rows": scene.rows,
        "cols": scene.cols,
        "cell_size": scene.cell_size,
        "custom_cell_size": scene.custom_cell_size,
        "origin": [float(scene.origin[0]), float(scene.origin[1])],
        "panorama": {"width": width, "height": height},
        "free_cells": [list(c) for c in sorted(scene.free_cells)],
        "locations": [
            {"id": loc.id, "row": loc.row, "col": loc.col} for loc in scene.locations
        ],
        "landmark_targets": _target_models(scene.landmark_targets),
        "featureful_targets": _target_models(scene.featureful_targets),
    }


def save_scene(scene: GridScene, package_path: Path) -> None:
    """Write `scene` as a scene package. Output is byte-deterministic."""
    package_path = Path(package_path)
    text = json.dumps(_manifest_dict(scene), indent=2, sort_keys=True) + "\n"
    try:
        pano_dir = package_path / PANO_DIR
        pano_dir.mkdir(parents=True, exist_ok=True)
        for stale in pano_dir.glob("*.png"):
            stale.unlink()
        for loc in scene.locations:
            Image.fromarray(loc.panorama).save(pano_dir / f"{loc.id}.png")
        (package_path / MANIFEST_NAME).write_text(text)
    except OSError as e:
        raise SceneError(f"Cannot write scene package {package_path}: {e}", "unwritable")
    logger.debug("Saved scene {} ({} locations) to {}", scene.scene_id, scene.num_locations, package_path)


def _read_manifest(package_path: Path) -> SceneManifest:
    manifest_file = package_path / MANIFEST_NAME
    if not manifest_file.is_file():
        raise SceneError(f"No {MANIFEST_NAME} in {package_path}", "missing-manifest")
    try:
        raw = json.loads(manifest_file.read_text())
    except json.JSONDecodeError as e:
        raise SceneError(f"Malformed manifest {manifest_file}: {e}", "invalid-scene")
    if not isinstance(raw, dict) or "version" not in raw:
        raise SceneError(f"Manifest {manifest_file} has no version", "invalid-scene")
    if raw["version"] != MANIFEST_VERSION:
        raise SceneError(
            f"Unsupported manifest version {raw['version']!r}", "unsupported-version"
        )
    try:
        return SceneManifest(**raw)
    except ValidationError as e:
        raise SceneError(f"Invalid manifest {manifest_file}: {e}", "invalid-scene")


def load_scene(package_path: Path) -> GridScene:
    """Load and validate a scene package."""
    package_path = Path(package_path)
    manifest = _read_manifest(package_path)
    pano_dir = package_path / PANO_DIR
    pano_files = sorted(pano_dir.glob("*.png")) if pano_dir.is_dir() else []
    if len(pano_files) != len(manifest.locations):
        raise SceneError(
            f"{manifest.scene_id}: {len(pano_files)} panoramas for "
            f"{len(manifest.locations)} locations",
            "panorama-count",
        )
    expected = (manifest.panorama.height, manifest.panorama.width, 3)
    locations = []
    for loc in manifest.locations:
        path = pano_dir / f"{loc.id}.png"
        if not path.is_file():
            raise SceneError(f"Missing panorama {path}", "panorama-count")
        with Image.open(path) as img:
            pano = np.asarray(img.convert("RGB"), dtype=np.uint8)
        if pano.shape != expected:
            raise SceneError(
                f"Panorama {path} is {pano.shape}, manifest declares {expected}",
                "invalid-scene",
            )
        locations.append(LocationRecord(loc.id, loc.row, loc.col, pano))

    def targets(models: List[_TargetModel]) -> Tuple[TargetRef, ...]:
        return tuple(TargetRef(t.location_id, Heading.parse(t.heading)) for t in models)

    scene = GridScene(
        scene_id=manifest.scene_id,
        rows=manifest.rows,
        cols=manifest.cols,
        cell_size=manifest.cell_size,
        free_cells=frozenset(tuple(c) for c in manifest.free_cells),
        locations=tuple(locations),
        landmark_targets=targets(manifest.landmark_targets),
        featureful_targets=targets(manifest.featureful_targets),
        origin=tuple(manifest.origin),
        category=manifest.category,
        split=manifest.split,
        custom_cell_size=manifest.custom_cell_size,
    )
    logger.debug("Loaded scene {} from {}", scene.scene_id, package_path)
    return scene


def load_scenes(paths: Iterable[Path]) -> List[GridScene]:
    return [load_scene(p) for p in paths]


@dataclass(frozen=True)
class SceneStats:
    """One row of a dataset statistics table."""

    name: str
    total_locs: int
    target_locs: int
    featureful_locs: int
    split: str = ""
    category: str = ""

    def __add__(self, other: "SceneStats") -> "SceneStats":
        return SceneStats(
            name="total",
            total_locs=self.total_locs + other.total_locs,
            target_locs=self.target_locs + other.target_locs,
            featureful_locs=self.featureful_locs + other.featureful_locs,
        )


def scene_stats(scene: GridScene) -> SceneStats:
    return SceneStats(
        name=scene.scene_id,
        total_locs=len(scene.locations),
        target_locs=len(scene.landmark_targets),
        featureful_locs=len({t.location_id for t in scene.featureful_targets}),
        split=scene.split,
        category=scene.category.value,
    )


def total_stats(rows: Iterable[SceneStats]) -> SceneStats:
    total = SceneStats("total", 0, 0, 0)
    for row in rows:
        total = total + row
    return total


def reference_dataset_stats() -> List[SceneStats]:
    """Statistics of the 24 captured real-world scenes, for format comparison."""
    raw = json.loads(REFERENCE_DATASET.read_text())
    return [SceneStats(**row) for row in raw["scenes"]]


def stats_table(rows: Sequence[SceneStats], title: str = "Dataset Statistics") -> Table:
    table = Table(title=title, title_justify="left", header_style="bold magenta")
    table.add_column("Scene Name")
    table.add_column("Split")
    table.add_column("Total Locs", justify="right")
    table.add_column("Target Locs", justify="right")
    table.add_column("Featureful Locs", justify="right")
    for row in rows:
        table.add_row(
            row.name,
            row.split,
            str(row.total_locs),
            str(row.target_locs),
            str(row.featureful_locs),
        )
    total = total_stats(rows)
    table.add_section()
    table.add_row(
        "[bold]total[/bold]",
        "",
        f"{total.total_locs:,}",
        f"{total.target_locs:,}",
        f"{total.featureful_locs:,}",
    )
    return table
