"""Room geometry: microphone arrays, the cell grid, class inventory and priors.

Everything here is immutable after construction and safe to share across
workers. The scene is the single source of truth for array/cell/class
indexing used by every other module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SPEECH_LABEL = "speech"
SILENCE_LABEL = "silence"


class OutOfDomainError(ValueError):
    """A point falls outside the cell grid."""


@dataclass(frozen=True)
class CellGrid:
    """Rectangular partition of the room floor into nx*ny cells.

    Cell indices are row-major: j = iy * nx + ix. Points exactly on a
    shared edge belong to the lower-index (left / bottom) cell.
    """

    nx: int
    ny: int
    cell_size: tuple[float, float]  # (width, height) in meters
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid must have at least one cell per axis")
        if self.cell_size[0] <= 0 or self.cell_size[1] <= 0:
            raise ValueError("cell dimensions must be positive")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> tuple[float, float]:
        return (self.nx * self.cell_size[0], self.ny * self.cell_size[1])

    def centroid(self, j: int) -> tuple[float, float]:
        if not 0 <= j < self.n_cells:
            raise IndexError(f"cell index {j} out of range [0, {self.n_cells})")
        iy, ix = divmod(j, self.nx)
        return (
            self.origin[0] + (ix + 0.5) * self.cell_size[0],
            self.origin[1] + (iy + 0.5) * self.cell_size[1],
        )

    def centroids(self) -> np.ndarray:
        """All P centroids as a (P, 2) array, in cell-index order."""
        return np.array([self.centroid(j) for j in range(self.n_cells)])

    def cell_rect(self, j: int) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) bounds of cell j."""
        iy, ix = divmod(j, self.nx)
        x0 = self.origin[0] + ix * self.cell_size[0]
        y0 = self.origin[1] + iy * self.cell_size[1]
        return (x0, y0, x0 + self.cell_size[0], y0 + self.cell_size[1])


def _axis_index(coord: float, origin: float, step: float, n: int) -> int:
    rel = coord - origin
    if rel < 0 or rel > n * step:
        raise OutOfDomainError(f"coordinate {coord} outside grid")
    i = int(np.floor(rel / step))
    # points exactly on an internal edge join the lower-index cell
    if i >= 1 and rel == i * step:
        i -= 1
    return min(i, n - 1)


def cell_of(point, grid: CellGrid) -> int:
    """Map a 2-D point (meters) to its cell index.

    Boundary points go to the lower-index cell; points outside the grid
    raise OutOfDomainError.
    """
    x, y = float(point[0]), float(point[1])
    ix = _axis_index(x, grid.origin[0], grid.cell_size[0], grid.nx)
    iy = _axis_index(y, grid.origin[1], grid.cell_size[1], grid.ny)
    return iy * grid.nx + ix


@dataclass(frozen=True)
class ArrayGeometry:
    """One compact microphone array; positions in meters, shape (M, 2)."""

    array_id: int
    mic_positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 2:
            raise ValueError("mic_positions must be (M>=2, 2)")
        if len({tuple(p) for p in pos.tolist()}) != pos.shape[0]:
            raise ValueError("microphone positions must be pairwise distinct")
        object.__setattr__(self, "mic_positions", pos)

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]


@dataclass(frozen=True)
class SceneConfig:
    """Full scene: room, K arrays, P-cell grid, C class labels.

    `classes` must contain the reserved labels "speech" and "silence";
    the remaining labels are the acoustic-event classes proper.
    """

    room_size: tuple[float, float]
    arrays: tuple[ArrayGeometry, ...]
    grid: CellGrid
    classes: tuple[str, ...]
    sample_rate: int
    max_simultaneous: int = 2

    def __post_init__(self):
        object.__setattr__(self, "arrays", tuple(self.arrays))
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.arrays) < 1:
            raise ValueError("need at least one microphone array")
        if len(self.classes) < 2 or len(set(self.classes)) != len(self.classes):
            raise ValueError("need >= 2 distinct class labels")
        for required in (SPEECH_LABEL, SILENCE_LABEL):
            if required not in self.classes:
                raise ValueError(f"class list must include {required!r}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.max_simultaneous not in (1, 2):
            raise ValueError("reference protocol supports 1 or 2 simultaneous sources")
        w, h = self.room_size
        for arr in self.arrays:
            p = arr.mic_positions
            if np.any(p[:, 0] < 0) or np.any(p[:, 0] > w) or np.any(p[:, 1] < 0) or np.any(p[:, 1] > h):
                raise ValueError(f"array {arr.array_id} has microphones outside the room")

    @property
    def n_arrays(self) -> int:
        return len(self.arrays)

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def silence_id(self) -> int:
        return self.classes.index(SILENCE_LABEL)

    @property
    def speech_id(self) -> int:
        return self.classes.index(SPEECH_LABEL)

    @property
    def ae_class_ids(self) -> tuple[int, ...]:
        """Event classes scored by evaluation: everything but speech/silence."""
        skip = {self.silence_id, self.speech_id}
        return tuple(i for i in range(self.n_classes) if i not in skip)

    @property
    def n_mics_total(self) -> int:
        return sum(a.n_mics for a in self.arrays)

    def channel_slice(self, array_id: int) -> slice:
        """Rows of a stacked multichannel recording belonging to one array."""
        start = sum(a.n_mics for a in self.arrays[:array_id])
        return slice(start, start + self.arrays[array_id].n_mics)

    def all_mic_positions(self) -> np.ndarray:
        """All microphones stacked in channel order, shape (n_mics_total, 2)."""
        return np.vstack([a.mic_positions for a in self.arrays])


@dataclass(frozen=True)
class PriorTable:
    """Class and position priors used by the MAP decision stage."""

    class_priors: np.ndarray
    position_priors: np.ndarray

    def __post_init__(self):
        for name in ("class_priors", "position_priors"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1 or np.any(v < 0):
                raise ValueError(f"{name} must be a nonnegative vector")
            if abs(v.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1 (got {v.sum()!r})")
            object.__setattr__(self, name, v)

    @staticmethod
    def flat(n_classes: int, n_cells: int) -> "PriorTable":
        return PriorTable(
            class_priors=np.full(n_classes, 1.0 / n_classes),
            position_priors=np.full(n_cells, 1.0 / n_cells),
        )


def estimate_position_priors(
    training_events,
    grid: CellGrid,
    n_classes: int,
    smoothing: bool = True,
) -> PriorTable:
    """Estimate position priors by counting event occurrences per cell.

    `training_events` is an iterable of (class_id, cell_id) pairs. The
    prior of cell j is its occurrence count over the total; with add-one
    smoothing (default) every cell keeps nonzero mass so downstream MAP
    products stay well defined. Class priors are left flat.
    """
    events = list(training_events)
    if not events:
        raise ValueError("cannot estimate priors from an empty event list")
    counts = np.zeros(grid.n_cells)
    for _cls, cell in events:
        if not 0 <= cell < grid.n_cells:
            raise ValueError(f"cell id {cell} out of range")
        counts[cell] += 1
    if smoothing:
        pos = (counts + 1.0) / (counts.sum() + grid.n_cells)
    else:
        pos = counts / counts.sum()
    return PriorTable(
        class_priors=np.full(n_classes, 1.0 / n_classes),
        position_priors=pos,
    )


def default_grid() -> CellGrid:
    """The reference 6x6 grid with 0.661 m x 0.874 m cells."""
    return CellGrid(nx=6, ny=6, cell_size=(0.661, 0.874))


# -- scene config file (JSON) -------------------------------------------------

def scene_to_dict(scene: SceneConfig) -> dict:
    return {
        "room": list(scene.room_size),
        "sample_rate": scene.sample_rate,
        "max_simultaneous": scene.max_simultaneous,
        "grid": {
            "nx": scene.grid.nx,
            "ny": scene.grid.ny,
            "cell": list(scene.grid.cell_size),
            "origin": list(scene.grid.origin),
        },
        "arrays": [{"mics": a.mic_positions.tolist()} for a in scene.arrays],
        "classes": list(scene.classes),
    }


def scene_from_dict(d: dict) -> SceneConfig:
    g = d["grid"]
    grid = CellGrid(
        nx=int(g["nx"]),
        ny=int(g["ny"]),
        cell_size=tuple(g["cell"]),
        origin=tuple(g.get("origin", (0.0, 0.0))),
    )
    arrays = tuple(
        ArrayGeometry(array_id=k, mic_positions=np.asarray(a["mics"], dtype=float))
        for k, a in enumerate(d["arrays"])
    )
    return SceneConfig(
        room_size=tuple(d["room"]),
        arrays=arrays,
        grid=grid,
        classes=tuple(d["classes"]),
        sample_rate=int(d["sample_rate"]),
        max_simultaneous=int(d.get("max_simultaneous", 2)),
    )


def save_scene(scene: SceneConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, indent=2)
        f.write("\n")


def load_scene(path) -> SceneConfig:
    with open(path) as f:
        return scene_from_dict(json.load(f))
