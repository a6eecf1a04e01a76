"""Per-scan fusion: point pre-counting, the gated per-cell Kalman update and
the scan-level pipeline.

Pipeline order per scan::

    recenter -> transform/range/exclusion -> drift offset -> precount
    -> height update + ray casting -> overlap clearance
    -> normals + traversability -> time variance
"""
from __future__ import annotations

import enum
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numba
import numpy as np

from . import analysis, drift, raycast
from .grid import DEFAULT_VAR_INIT, ElevationMap, add_time_variance, recenter, world_to_index_array
from .sensing import (
    ExclusionParams,
    PointCloud,
    RigidTransform,
    SensorNoiseParams,
    is_excluded,
    point_variance,
)

#: Phase names, matching the per-feature timing breakdown used by ``bench``.
PHASES = (
    "point transform & z error count",
    "drift compensation",
    "height update & ray casting",
    "overlap clearance",
    "traversability",
    "normal calculation",
)

FUSED, OUTLIER, IGNORED_LOW = 0, 1, 2


class Disposition(enum.IntEnum):
    FUSED = FUSED
    OUTLIER = OUTLIER
    IGNORED_LOW = IGNORED_LOW


class InvalidVariance(ValueError):
    pass


@dataclass(frozen=True)
class UpdateParams:
    mahalanobis_threshold: float = 2.5
    var_outlier: float = 0.01
    wall_count_threshold: int = 4
    var_time: float = 1e-5
    var_max: float = 1.0
    var_init: float = DEFAULT_VAR_INIT
    time_variance_period: float = 0.1
    max_range: float = 20.0
    noise: SensorNoiseParams = field(default_factory=SensorNoiseParams)
    exclusion: ExclusionParams = field(default_factory=ExclusionParams)
    drift: drift.DriftParams = field(default_factory=drift.DriftParams)
    cleanup: raycast.CleanupParams = field(default_factory=raycast.CleanupParams)
    overlap: analysis.OverlapParams = field(default_factory=analysis.OverlapParams)
    traversability: analysis.TraversabilityParams = field(default_factory=analysis.TraversabilityParams)
    drift_enabled: bool = True
    cleanup_enabled: bool = True
    overlap_enabled: bool = True
    parallel: bool = False

    def __post_init__(self):
        if not self.mahalanobis_threshold > 0:
            raise ValueError("mahalanobis_threshold must be > 0")
        if self.wall_count_threshold < 1:
            raise ValueError("wall_count_threshold must be >= 1")
        if not (self.var_max > 0 and self.var_init > 0 and self.var_outlier >= 0 and self.var_time >= 0):
            raise ValueError("variances must be positive")


@dataclass
class ScanStats:
    points_in: int = 0
    points_out_of_range: int = 0
    points_excluded: int = 0
    points_out_of_map: int = 0
    points_rejected_outlier: int = 0
    points_ignored_low: int = 0
    points_fused: int = 0
    cells_updated: int = 0
    cells_removed_by_cleanup: int = 0
    cells_cleared_by_overlap: int = 0
    drift_points: int = 0
    drift_offset_applied: float = 0.0
    drift_clamped: bool = False
    phase_timings: dict[str, float] = field(default_factory=lambda: {p: 0.0 for p in PHASES})

    COUNTERS = (
        "points_in", "points_out_of_range", "points_excluded", "points_out_of_map",
        "points_rejected_outlier", "points_ignored_low", "points_fused",
        "cells_updated", "cells_removed_by_cleanup", "cells_cleared_by_overlap",
        "drift_points", "drift_offset_applied", "drift_clamped",
    )

    @property
    def total_time(self) -> float:
        return sum(self.phase_timings.values())

    def conserved(self) -> bool:
        return self.points_in == (
            self.points_out_of_range + self.points_excluded + self.points_out_of_map
            + self.points_rejected_outlier + self.points_ignored_low + self.points_fused
        )

    def row(self, timings: bool = True) -> dict:
        out = {k: getattr(self, k) for k in self.COUNTERS}
        out["drift_clamped"] = int(self.drift_clamped)
        if timings:
            out.update(self.phase_timings)
            out["total"] = self.total_time
        return out


@numba.njit(cache=True)
def _kalman_step(valid, h, var, pz, pvar, count, wall_thr, maha, var_outlier, var_max, var_init):
    if not valid:
        return pz, var_init * pvar / (var_init + pvar), FUSED
    # innovation std: spread of pz - h expected from cell and point noise
    sd = np.sqrt(var + pvar)
    # wall rule: in a crowded cell, points far below the estimate are dropped
    # silently instead of inflating the variance as outliers
    if count > wall_thr and pz < h - maha * sd:
        return h, var, IGNORED_LOW
    if abs(pz - h) / sd > maha:
        return h, min(var + var_outlier, var_max), OUTLIER
    return (pvar * h + var * pz) / (var + pvar), var * pvar / (var + pvar), FUSED


def kalman_update_cell(h, var, pz, pvar, cell_count, params: UpdateParams, valid: bool = True):
    """Gated update of one cell by one point. Returns ``(h', var', Disposition)``.

    Gates, in order: wall rule (crowded cell and ``pz`` below the
    Mahalanobis band), Mahalanobis rejection, fusion. The Mahalanobis
    distance is ``|pz - h| / sqrt(var + pvar)``. An invalid
    cell (``valid=False``) is initialized from the point against
    ``params.var_init``.
    """
    if not pvar > 0 or (valid and not var > 0):
        raise InvalidVariance(f"variances must be positive (cell {var}, point {pvar})")
    h2, v2, d = _kalman_step(bool(valid), float(h) if valid else 0.0, float(var) if valid else 1.0,
                             float(pz), float(pvar), int(cell_count), int(params.wall_count_threshold),
                             float(params.mahalanobis_threshold), float(params.var_outlier),
                             float(params.var_max), float(params.var_init))
    return h2, v2, Disposition(d)


@numba.njit(cache=True)
def _fuse_range(order, lo, hi, cells, pz, pvar, counts, valid, elev, var, last_update, ub, ubv,
                touched, disp, now, wall_thr, maha, var_outlier, var_max, var_init):
    for k in range(lo, hi):
        i = order[k]
        j = cells[i]
        h2, v2, d = _kalman_step(valid[j], elev[j], var[j], pz[i], pvar[i], counts[j],
                                 wall_thr, maha, var_outlier, var_max, var_init)
        disp[i] = d
        if d == FUSED:
            elev[j] = h2
            var[j] = v2
            valid[j] = True
            last_update[j] = now
            ub[j] = h2
            ubv[j] = True
            touched[j] = True
        elif d == OUTLIER:
            var[j] = v2


@numba.njit(cache=True, parallel=True)
def _fuse_grouped(order, starts, cells, pz, pvar, counts, valid, elev, var, last_update, ub, ubv,
                  touched, disp, now, wall_thr, maha, var_outlier, var_max, var_init):
    # one group per cell: a cell's points stay in scan order within its group
    for g in numba.prange(len(starts) - 1):
        _fuse_range(order, starts[g], starts[g + 1], cells, pz, pvar, counts, valid, elev, var,
                    last_update, ub, ubv, touched, disp, now, wall_thr, maha, var_outlier, var_max, var_init)


def precount_scan(points_map: np.ndarray, emap: ElevationMap) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell point count and maximum point height for one scan.

    Untouched cells report 0 for both.
    """
    pts = np.asarray(points_map, dtype=np.float64).reshape(-1, 3)
    spec = emap.spec
    rows, cols, inside = world_to_index_array(pts, spec)
    flat = rows[inside] * spec.width + cols[inside]
    n = spec.width * spec.height
    counts = np.bincount(flat, minlength=n).astype(np.int32).reshape(spec.shape)
    maxh = np.full(n, -np.inf)
    np.maximum.at(maxh, flat, pts[inside, 2])
    maxh[counts.ravel() == 0] = 0.0
    return counts, maxh.reshape(spec.shape)


def fuse_points(emap: ElevationMap, points_map: np.ndarray, pvar: np.ndarray, counts: np.ndarray,
                params: UpdateParams, now: float) -> tuple[np.ndarray, np.ndarray]:
    """Apply the Kalman update for every in-map point, in place.

    Returns ``(dispositions, touched)``: per-point disposition codes (-1 for
    out-of-map points) and the mask of cells fused this call.
    """
    spec = emap.spec
    rows, cols, inside = world_to_index_array(points_map, spec)
    cells = np.where(inside, rows * spec.width + cols, -1)
    disp = np.full(len(points_map), -1, np.int8)
    touched = np.zeros(spec.width * spec.height, np.bool_)
    L = emap.layers
    idx = np.nonzero(inside)[0]
    if len(idx):
        arrays = (cells, np.ascontiguousarray(points_map[:, 2]), np.ascontiguousarray(pvar, dtype=np.float64),
                  counts.ravel(), L["valid"].ravel(), L["elevation"].ravel(), L["variance"].ravel(),
                  L["last_update"].ravel(), L["upper_bound"].ravel(), L["upper_bound_valid"].ravel(),
                  touched, disp)
        consts = (float(now), int(params.wall_count_threshold), float(params.mahalanobis_threshold),
                  float(params.var_outlier), float(params.var_max), float(params.var_init))
        if params.parallel:
            order = idx[np.argsort(cells[idx], kind="stable")]
            sc = cells[order]
            starts = np.concatenate(([0], np.nonzero(np.diff(sc))[0] + 1, [len(order)])).astype(np.int64)
            _fuse_grouped(order, starts, *arrays, *consts)
        else:
            _fuse_range(idx, 0, len(idx), *arrays, *consts)
    return disp, touched.reshape(spec.shape)


@contextmanager
def _timed(stats: ScanStats, phase: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        stats.phase_timings[phase] += time.perf_counter() - t0


def integrate_scan(emap: ElevationMap, cloud: PointCloud, pose: RigidTransform, params: UpdateParams,
                   robot_z: float | None = None) -> ScanStats:
    """Fuse one sensor scan into ``emap`` in place.

    ``pose`` maps sensor-frame points into the map frame; its translation is
    the ray origin. ``robot_z`` is the robot base height used by overlap
    clearance (defaults to the sensor height minus ``overlap.sensor_height``).
    """
    pose.validate()
    stats = ScanStats()
    now = float(cloud.stamp)
    dt = 0.0 if emap.stamp is None else max(0.0, now - emap.stamp)
    origin = pose.translation
    L = emap.layers

    with _timed(stats, PHASES[0]):
        recenter(emap, origin[:2])
        pts_sensor = cloud.points
        stats.points_in = len(pts_sensor)
        rel = pts_sensor @ pose.rotation.T  # sensor-relative offsets, map axes
        dist = np.linalg.norm(pts_sensor, axis=1)
        in_range = dist <= params.max_range
        stats.points_out_of_range = int(np.count_nonzero(~in_range))
        excluded = in_range & is_excluded(rel, params.exclusion)
        stats.points_excluded = int(np.count_nonzero(excluded))
        keep = in_range & ~excluded
        pts = rel[keep] + origin
        pvar = point_variance(dist[keep], params.noise)

    with _timed(stats, PHASES[1]):
        if params.drift_enabled and len(pts):
            est = drift.compute_drift_error(emap, pts, params.drift)
            stats.drift_points = est.n
            if est.n >= params.drift.min_points:
                applied, clamped = drift.apply_height_offset(emap, est.mean_error, params.drift.max_offset_per_scan)
                stats.drift_offset_applied = applied
                stats.drift_clamped = clamped

    with _timed(stats, PHASES[0]):
        counts, _ = precount_scan(pts, emap)
        L["scan_point_count"][...] = counts

    with _timed(stats, PHASES[2]):
        disp, touched = fuse_points(emap, pts, pvar, counts, params, now)
        stats.points_out_of_map = int(np.count_nonzero(disp < 0))
        stats.points_fused = int(np.count_nonzero(disp == FUSED))
        stats.points_rejected_outlier = int(np.count_nonzero(disp == OUTLIER))
        stats.points_ignored_low = int(np.count_nonzero(disp == IGNORED_LOW))
        stats.cells_updated = int(np.count_nonzero(touched))
        cp = params.cleanup
        do_cleanup = params.cleanup_enabled and cp.cleanup_enabled
        if len(pts) and (do_cleanup or cp.upper_bound_enabled):
            cp = raycast.CleanupParams(cp.alpha_n, cp.t_free, do_cleanup, cp.upper_bound_enabled)
            remove, cand = raycast.cast_rays(emap, origin, pts, cp, now, parallel=params.parallel)
            remove &= L["valid"]
            if do_cleanup:
                emap.invalidate(remove)
                stats.cells_removed_by_cleanup = int(np.count_nonzero(remove))
            if cp.upper_bound_enabled:
                # removed cells lose their old bound: only this scan's rays constrain them
                L["upper_bound_valid"][remove] = False
                raycast.update_upper_bound(emap, cand)

    with _timed(stats, PHASES[3]):
        if params.overlap_enabled:
            rz = origin[2] - params.overlap.sensor_height if robot_z is None else robot_z
            cleared = analysis.overlap_clearance(emap, origin[:2], rz, params.overlap)
            stats.cells_cleared_by_overlap = len(cleared)

    with _timed(stats, PHASES[5]):
        analysis.compute_normals(emap)

    with _timed(stats, PHASES[4]):
        analysis.traversability_geometric(emap, params.traversability)

    with _timed(stats, PHASES[2]):
        add_time_variance(emap, dt, params.var_time, params.var_max, params.time_variance_period, mask=~touched)

    emap.stamp = now
    return stats
