"""Layered 2.5D grid storage, world/cell indexing and robot-centric recentering.

Rows index the world y axis and columns the world x axis. The grid origin
(lower-left corner) is ``center - extent / 2``; a cell ``(row, col)`` covers
``[origin + col*res, origin + (col+1)*res)`` in x (half-open, so boundary
points belong to the higher-index cell).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

#: Fresh cells are uninformative; see ``UpdateParams.var_init``.
DEFAULT_VAR_INIT = 100.0


class OutOfMap(ValueError):
    """A world position falls outside the grid extent."""


class CellIndex(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class GridSpec:
    resolution: float = 0.04
    width: int = 250
    height: int = 250
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        if self.width < 3 or self.height < 3:
            raise ValueError("width and height must be >= 3 cells")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution

    @property
    def origin(self) -> tuple[float, float]:
        ex, ey = self.extent
        return self.center[0] - ex / 2.0, self.center[1] - ey / 2.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def with_center(self, center) -> "GridSpec":
        return GridSpec(self.resolution, self.width, self.height, (center[0], center[1]))


def world_to_index(p, spec: GridSpec) -> CellIndex:
    """Cell containing world xy position ``p``; raises :class:`OutOfMap`."""
    ox, oy = spec.origin
    col = math.floor((p[0] - ox) / spec.resolution)
    row = math.floor((p[1] - oy) / spec.resolution)
    if not (0 <= row < spec.height and 0 <= col < spec.width):
        raise OutOfMap(f"point ({p[0]:.4f}, {p[1]:.4f}) outside grid centered at {spec.center}")
    return CellIndex(row, col)


def index_to_world(idx, spec: GridSpec) -> tuple[float, float]:
    """World xy of the center of cell ``idx``."""
    ox, oy = spec.origin
    return ox + (idx[1] + 0.5) * spec.resolution, oy + (idx[0] + 0.5) * spec.resolution


def world_to_index_array(xy: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized lookup. Returns ``(rows, cols, inside)``; rows/cols are only
    meaningful where ``inside`` is true."""
    ox, oy = spec.origin
    cols = np.floor((xy[:, 0] - ox) / spec.resolution).astype(np.int64)
    rows = np.floor((xy[:, 1] - oy) / spec.resolution).astype(np.int64)
    inside = (rows >= 0) & (rows < spec.height) & (cols >= 0) & (cols < spec.width)
    return rows, cols, inside


def cell_centers(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Meshgrid ``(X, Y)`` of cell-center world coordinates, shape (height, width)."""
    ox, oy = spec.origin
    xs = ox + (np.arange(spec.width) + 0.5) * spec.resolution
    ys = oy + (np.arange(spec.height) + 0.5) * spec.resolution
    return np.meshgrid(xs, ys)


# Layer name -> (dtype, fill value for fresh cells). Normals are stored as
# three scalar layers so every layer is a plain 2D array.
LAYERS: dict[str, tuple[type, object]] = {
    "elevation": (np.float64, np.nan),
    "variance": (np.float64, np.nan),
    "last_update": (np.float64, np.nan),
    "upper_bound": (np.float64, np.nan),
    "traversability": (np.float64, np.nan),
    "normal_x": (np.float64, np.nan),
    "normal_y": (np.float64, np.nan),
    "normal_z": (np.float64, np.nan),
    "valid": (np.bool_, False),
    "upper_bound_valid": (np.bool_, False),
    "normal_valid": (np.bool_, False),
    "scan_point_count": (np.int32, 0),
}


@dataclass
class ElevationMap:
    """Fixed-size layered grid with a world-anchored moving center.

    Invalid cells carry ``nan`` in every float layer that describes the
    height estimate (elevation, variance, traversability); the boolean
    ``valid`` layer is the authoritative flag.
    """

    spec: GridSpec
    layers: dict[str, np.ndarray] = field(default_factory=dict)
    stamp: float | None = None

    def __post_init__(self):
        for name, (dtype, fill) in LAYERS.items():
            if name not in self.layers:
                self.layers[name] = np.full(self.spec.shape, fill, dtype=dtype)
            arr = self.layers[name]
            if arr.shape != self.spec.shape:
                raise ValueError(f"layer {name!r} has shape {arr.shape}, expected {self.spec.shape}")

    @classmethod
    def empty(cls, spec: GridSpec | None = None) -> "ElevationMap":
        return cls(spec or GridSpec())

    def copy(self) -> "ElevationMap":
        return ElevationMap(self.spec, {k: v.copy() for k, v in self.layers.items()}, self.stamp)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.layers[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in LAYERS:
            raise KeyError(f"unknown layer {name!r}")
        self.layers[name][...] = value

    # shorthand for the most used layers
    @property
    def elevation(self) -> np.ndarray:
        return self.layers["elevation"]

    @property
    def variance(self) -> np.ndarray:
        return self.layers["variance"]

    @property
    def valid(self) -> np.ndarray:
        return self.layers["valid"]

    @property
    def normal(self) -> np.ndarray:
        """(height, width, 3) stacked copy of the normal layers."""
        return np.stack([self.layers["normal_x"], self.layers["normal_y"], self.layers["normal_z"]], axis=-1)

    def invalidate(self, mask: np.ndarray, clear_upper_bound: bool = False) -> None:
        """Drop the height estimate of every cell in ``mask``."""
        L = self.layers
        L["valid"][mask] = False
        for name in ("elevation", "variance", "traversability", "normal_x", "normal_y", "normal_z"):
            L[name][mask] = np.nan
        L["normal_valid"][mask] = False
        if clear_upper_bound:
            L["upper_bound"][mask] = np.nan
            L["upper_bound_valid"][mask] = False


@dataclass(frozen=True)
class ShiftReport:
    cols: int
    rows: int

    @property
    def moved(self) -> bool:
        return self.cols != 0 or self.rows != 0


def _shift_layer(arr: np.ndarray, drow: int, dcol: int, fill) -> np.ndarray:
    # new[r, c] = old[r + drow, c + dcol]
    out = np.full_like(arr, fill)
    h, w = arr.shape
    if abs(drow) >= h or abs(dcol) >= w:
        return out
    src_r = slice(max(drow, 0), h + min(drow, 0))
    dst_r = slice(max(-drow, 0), h + min(-drow, 0))
    src_c = slice(max(dcol, 0), w + min(dcol, 0))
    dst_c = slice(max(-dcol, 0), w + min(-dcol, 0))
    out[dst_r, dst_c] = arr[src_r, src_c]
    return out


def _quantize(delta: float, res: float) -> int:
    # one-cell hysteresis, then nearest whole cell
    if abs(delta) < res:
        return 0
    return int(round(delta / res))


def recenter(emap: ElevationMap, new_center) -> ShiftReport:
    """Move the map center toward ``new_center`` by whole cells, in place.

    Surviving cells keep every layer value; exposed cells are fresh.
    """
    spec = emap.spec
    dcol = _quantize(new_center[0] - spec.center[0], spec.resolution)
    drow = _quantize(new_center[1] - spec.center[1], spec.resolution)
    if dcol == 0 and drow == 0:
        return ShiftReport(0, 0)
    for name, (_, fill) in LAYERS.items():
        emap.layers[name] = _shift_layer(emap.layers[name], drow, dcol, fill)
    emap.spec = spec.with_center(
        (spec.center[0] + dcol * spec.resolution, spec.center[1] + drow * spec.resolution)
    )
    return ShiftReport(dcol, drow)


def add_time_variance(
    emap: ElevationMap,
    dt: float,
    var_time: float,
    var_max: float,
    period: float = 0.1,
    mask: np.ndarray | None = None,
) -> None:
    """Grow the variance of valid cells by ``var_time`` per nominal ``period``.

    ``mask`` restricts the update to a subset of cells (e.g. cells that were
    not fused in the current scan).
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0 or var_time == 0:
        return
    sel = emap.valid if mask is None else (emap.valid & mask)
    var = emap.layers["variance"]
    var[sel] = np.minimum(var[sel] + var_time * (dt / period), var_max)
