"""Vertical drift compensation against the current map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ElevationMap, world_to_index_array


@dataclass(frozen=True)
class DriftParams:
    traversability_threshold: float = 0.8
    min_points: int = 10
    max_offset_per_scan: float = 0.10

    def __post_init__(self):
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")


@dataclass(frozen=True)
class DriftEstimate:
    mean_error: float
    n: int


def compute_drift_error(emap: ElevationMap, points_map: np.ndarray, params: DriftParams) -> DriftEstimate:
    """Mean ``p_z - h`` over points landing on valid, traversable cells."""
    pts = np.asarray(points_map, dtype=np.float64).reshape(-1, 3)
    rows, cols, inside = world_to_index_array(pts, emap.spec)
    r, c, z = rows[inside], cols[inside], pts[inside, 2]
    trav = emap.layers["traversability"][r, c]
    use = emap.valid[r, c] & (trav > params.traversability_threshold)
    n = int(np.count_nonzero(use))
    if n == 0:
        return DriftEstimate(float("nan"), 0)
    # fixed-order sum keeps the estimate reproducible
    err = z[use] - emap.elevation[r[use], c[use]]
    return DriftEstimate(float(np.sum(err) / n), n)


def apply_height_offset(emap: ElevationMap, offset: float, max_offset: float = np.inf) -> tuple[float, bool]:
    """Shift elevation and upper bound of every valid cell by ``offset``.

    The offset is clamped to ``[-max_offset, max_offset]``. Returns the
    applied offset and whether clamping happened.
    """
    clamped = abs(offset) > max_offset
    applied = float(np.clip(offset, -max_offset, max_offset))
    if applied == 0.0:
        return 0.0, clamped
    L = emap.layers
    v = L["valid"]
    L["elevation"][v] += applied
    ub = L["upper_bound_valid"]
    L["upper_bound"][ub] += applied
    return applied, clamped
