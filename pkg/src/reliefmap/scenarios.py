"""Reference simulation scenarios with their evaluation metrics.

Each ``run_*`` function builds a scene, drives the mapping pipeline over
simulated scans and returns the metrics used by the acceptance tests and
the demo scripts. Everything is seeded, so results are reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import compute_normals
from .grid import ElevationMap, GridSpec, cell_centers, world_to_index_array
from .integration import UpdateParams, integrate_scan
from .sensing import ExclusionParams, SensorNoiseParams
from .sim import (
    Box,
    Floor2,
    Ground,
    SceneSpec,
    SensorSpec,
    SlabOverhang,
    Stairs,
    TrajectorySpec,
    ground_truth_heightmap,
    simulate_scans,
)


def max_adjacent_step(emap: ElevationMap, mask: np.ndarray | None = None) -> float:
    """Largest height difference between 4-adjacent valid cells (in ``mask``)."""
    ok = emap.valid if mask is None else emap.valid & mask
    h = np.where(ok, emap.elevation, np.nan)
    diffs = np.concatenate([np.abs(np.diff(h, axis=0)).ravel(), np.abs(np.diff(h, axis=1)).ravel()])
    diffs = diffs[np.isfinite(diffs)]
    return float(diffs.max()) if diffs.size else 0.0


def _downward_sensor(alpha_d: float, cols=64, rows=48, pitch_deg=40.0, height=1.0, **kw) -> SensorSpec:
    return SensorSpec(cols=cols, rows=rows, mount_xyz=(0.0, 0.0, height), mount_pitch=math.radians(pitch_deg),
                      noise=SensorNoiseParams(alpha_d), **kw)


# ------------------------------------------------------------- flat ground

@dataclass
class FlatGroundResult:
    max_abs_height: float
    variance_decreasing: bool
    fusion_events: int
    emap: ElevationMap


def run_noiseless_flat(n_scans: int = 50, seed: int = 0) -> FlatGroundResult:
    """Static sensor 1 m above flat ground without noise.

    Tracks every cell that is fused in consecutive scans and checks that
    its variance went down each time.
    """
    sensor = _downward_sensor(0.0)
    params = UpdateParams()
    emap = ElevationMap.empty(GridSpec(0.04, 150, 150))
    prev_var = None
    decreasing = True
    events = 0
    for scan in simulate_scans(SceneSpec([Ground(0.0)]), sensor, TrajectorySpec(), n_scans, seed=seed):
        stats = integrate_scan(emap, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
        fused = emap.valid & (emap.layers["scan_point_count"] > 0) & (emap.layers["last_update"] == scan.time)
        var = emap.variance.copy()
        if prev_var is not None:
            both = fused & np.isfinite(prev_var)
            events += int(both.sum())
            decreasing &= bool(np.all(var[both] < prev_var[both]))
        prev_var = np.where(fused, var, np.nan)
        assert stats.conserved()
    return FlatGroundResult(float(np.nanmax(np.abs(emap.elevation))), decreasing, events, emap)


@dataclass
class NoiseConvergenceResult:
    rmse: float
    theoretical_std: float  # root mean square of the per-cell fused std
    cells: int
    emap: ElevationMap


def run_noise_convergence(alpha_d: float = 0.01, n_scans: int = 100, seed: int = 1) -> NoiseConvergenceResult:
    """Noisy static scans of flat ground; compares the map error with the
    std predicted by fusing every in-map point's model variance (harmonic
    sum, including the fresh-cell prior)."""
    sensor = _downward_sensor(alpha_d)
    params = UpdateParams(noise=SensorNoiseParams(alpha_d, 1e-6))
    emap = ElevationMap.empty(GridSpec(0.04, 250, 250))
    info = np.zeros(emap.spec.shape)
    for scan in simulate_scans(SceneSpec([Ground(0.0)]), sensor, TrajectorySpec(), n_scans, seed=seed):
        integrate_scan(emap, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
        pts = scan.est_pose.apply(scan.cloud.points)
        dist = np.linalg.norm(scan.cloud.points, axis=1)
        r, c, inside = world_to_index_array(pts, emap.spec)
        pvar = np.maximum(params.noise.alpha_d * dist[inside] ** 2, params.noise.var_min)
        np.add.at(info, (r[inside], c[inside]), 1.0 / pvar)
    cells = emap.valid & (info > 0)
    theory = 1.0 / (1.0 / params.var_init + info[cells])
    rmse = float(np.sqrt(np.mean(emap.elevation[cells] ** 2)))
    return NoiseConvergenceResult(rmse, float(np.sqrt(np.mean(theory))), int(cells.sum()), emap)


# ------------------------------------------------------------------- drift

@dataclass
class DriftResult:
    seam: float
    injected: float
    emap: ElevationMap


def run_drift_ablation(compensate: bool, n_scans: int = 50, drift_per_scan: float = 0.02,
                       seed: int = 7) -> DriftResult:
    """The robot turns once on the spot while its height estimate drifts
    upward by ``drift_per_scan``. The last view overlaps the first, so an
    uncorrected map shows a seam of roughly the total drift there."""
    sensor = _downward_sensor(1e-6, pitch_deg=30.0)
    duration = n_scans / sensor.rate
    traj = TrajectorySpec([(0.0, 0.0, 0.0, 0.0, 0.0), (duration, 0.0, 0.0, 0.0, 2 * math.pi)],
                          drift_rate=drift_per_scan * sensor.rate)
    params = UpdateParams(noise=SensorNoiseParams(5e-4), drift_enabled=compensate)
    emap = ElevationMap.empty(GridSpec(0.04, 250, 250))
    for scan in simulate_scans(SceneSpec([Ground(0.0)]), sensor, traj, n_scans, seed=seed):
        integrate_scan(emap, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
    X, Y = cell_centers(emap.spec)
    return DriftResult(max_adjacent_step(emap, np.hypot(X, Y) <= 4.0), drift_per_scan * n_scans, emap)


# --------------------------------------------------------- dynamic obstacle

@dataclass
class DynamicBoxResult:
    recovered_fraction: float
    box_cells: int
    emap: ElevationMap


def run_dynamic_box(cleanup: bool, n_scans: int = 51, vacate_scan: int = 30, seed: int = 3,
                    cols: int = 320, rows: int = 240) -> DynamicBoxResult:
    """A box in front of a static robot disappears at ``vacate_scan``.

    A former box cell counts as recovered when it is invalid or its height
    is within three standard deviations of the ground. The dense sensor
    puts several points per scan into each box cell, so ground returns
    there trip the wall rule and cannot overwrite the stale top by fusion.
    """
    sensor = _downward_sensor(1e-4, cols=cols, rows=rows, pitch_deg=35.0)
    box = Box(center=(1.5, 0.0, 0.25), size=(0.5, 0.5, 0.5), t_end=vacate_scan / sensor.rate)
    params = UpdateParams(noise=SensorNoiseParams(1e-4), cleanup_enabled=cleanup)
    spec = GridSpec(0.04, 150, 150)
    emap = ElevationMap.empty(spec)
    for scan in simulate_scans(SceneSpec([Ground(0.0), box]), sensor, TrajectorySpec(), n_scans, seed=seed):
        integrate_scan(emap, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
    X, Y = cell_centers(spec)
    foot = (np.abs(X - box.center[0]) < box.size[0] / 2) & (np.abs(Y - box.center[1]) < box.size[1] / 2)
    with np.errstate(invalid="ignore"):
        ok = ~emap.valid | (np.abs(emap.elevation) <= 3.0 * np.sqrt(emap.variance))
    return DynamicBoxResult(float(ok[foot].mean()), int(foot.sum()), emap)


# --------------------------------------------------------------- overhang

@dataclass
class OverhangResult:
    near_slab_cells: int
    under_cells: int
    emap: ElevationMap

    @property
    def near_slab_fraction(self) -> float:
        return self.near_slab_cells / self.under_cells


def overhang_exclusion(enabled: bool) -> ExclusionParams:
    # the ramp must stay below the slab (0.5 m above the sensor) out to the
    # slab's far edge, which the default ramp does not
    return ExclusionParams(theta=math.radians(30.0), b=0.2, c=0.5, d_max=0.4, enabled=enabled)


def run_overhang(exclusion: bool, n_scans: int = 20, seed: int = 5) -> OverhangResult:
    """Slab 1 m above the robot base spanning 1 to 2 m ahead, seen by a
    sensor 0.5 m up and tilted 20 degrees upward."""
    slab = SlabOverhang(footprint=(1.0, -1.0, 2.0, 1.0), z=1.0)
    sensor = SensorSpec(cols=128, rows=96, mount_xyz=(0.0, 0.0, 0.5), mount_pitch=math.radians(-20.0),
                        noise=SensorNoiseParams(1e-4))
    params = UpdateParams(noise=SensorNoiseParams(1e-4), exclusion=overhang_exclusion(exclusion))
    spec = GridSpec(0.04, 150, 150)
    emap = ElevationMap.empty(spec)
    for scan in simulate_scans(SceneSpec([Ground(0.0), slab]), sensor, TrajectorySpec(), n_scans, seed=seed):
        integrate_scan(emap, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
    X, Y = cell_centers(spec)
    x0, y0, x1, y1 = slab.footprint
    under = (X >= x0) & (X < x1) & (Y >= y0) & (Y < y1)
    with np.errstate(invalid="ignore"):
        near = emap.valid & (np.abs(emap.elevation - slab.z) <= 0.2)
    return OverhangResult(int((near & under).sum()), int(under.sum()), emap)


# ------------------------------------------------------------ upper bound

@dataclass
class UpperBoundResult:
    shadowed_cells: int
    finite_bounds: int
    min_margin: float  # min over shadowed cells of upper_bound - (truth - tolerance)
    later_points: int
    point_violations: int
    later_cells: int
    cell_violations: int
    tolerance: float


def run_upper_bound(seed: int = 2, alpha_d: float = 1e-4) -> UpperBoundResult:
    """Box shadow observed for 20 static scans, then the robot sidesteps
    and looks behind the box.

    Every later measurement landing in a formerly shadowed cell, and the
    final fused height there, is compared with the bound recorded at scan 20.
    """
    box = Box(center=(2.0, 0.0, 0.25), size=(0.5, 0.5, 0.5))
    scene = SceneSpec([Ground(0.0), box])
    sensor = _downward_sensor(alpha_d, cols=128, rows=96, pitch_deg=30.0)
    tol = 3.0 * math.sqrt(alpha_d) * sensor.max_range
    traj = TrajectorySpec([(0.0, 0.0, 0.0, 0.0, 0.0), (2.0, 0.0, 0.0, 0.0, 0.0),
                           (4.0, 0.0, 2.0, 0.0, -0.6), (6.0, 0.0, 2.0, 0.0, -0.6)])
    params = UpdateParams(noise=SensorNoiseParams(alpha_d))
    emap = ElevationMap.empty(GridSpec(0.04, 200, 200))
    res = emap.spec.resolution
    # ground hidden behind the box: from its far face to where rays grazing
    # its top edge come down
    far_x = box.center[0] + box.size[0] / 2
    top = box.center[2] + box.size[2] / 2
    end_x = far_x * sensor.mount_xyz[2] / (sensor.mount_xyz[2] - top)
    bounds = None
    later_points = point_viol = 0
    for scan in simulate_scans(scene, sensor, traj, 60, seed=seed):
        if scan.index == 20:
            X, Y = cell_centers(emap.spec)
            shadow = ((X > far_x + res) & (X < end_x - res) & (np.abs(Y) < box.size[1] / 2 - res)) & ~emap.valid
            truth, _ = ground_truth_heightmap(scene, emap.spec, scan.time)
            ub = np.where(emap.layers["upper_bound_valid"], emap.layers["upper_bound"], np.nan)
            n_shadow = int(shadow.sum())
            finite = int(np.isfinite(ub[shadow]).sum())
            min_margin = float(np.min(ub[shadow] - (truth[shadow] - tol)))
            # world-anchored copy so later lookups survive recentering
            bounds = {}
            for (r, c) in zip(*np.nonzero(shadow)):
                bounds[(int(np.floor(X[r, c] / res)), int(np.floor(Y[r, c] / res)))] = ub[r, c]
        if bounds is not None:
            pts = scan.est_pose.apply(scan.cloud.points)
            keys = np.floor(pts[:, :2] / res).astype(np.int64)
            for (kx, ky), z in zip(keys.tolist(), pts[:, 2]):
                b = bounds.get((kx, ky))
                if b is not None:
                    later_points += 1
                    point_viol += int(z > b + tol)
        integrate_scan(emap, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
    X, Y = cell_centers(emap.spec)
    later_cells = cell_viol = 0
    for (r, c) in zip(*np.nonzero(emap.valid)):
        b = bounds.get((int(np.floor(X[r, c] / res)), int(np.floor(Y[r, c] / res))))
        if b is not None:
            later_cells += 1
            cell_viol += int(emap.elevation[r, c] > b + tol)
    return UpperBoundResult(n_shadow, finite, min_margin, later_points, point_viol, later_cells, cell_viol, tol)


# -------------------------------------------------------------- two floors

@dataclass
class TwoFloorResult:
    stale_cells: int  # valid cells near the robot off its height by more than the threshold
    upper_floor_cells_seen: int
    final_robot_z: float


def run_two_floors(overlap: bool = True, seed: int = 4) -> TwoFloorResult:
    """Walk on an upper floor, descend a staircase and walk back underneath."""
    stairs = Stairs(origin=(6.0, -0.6, 0.0), heading=math.pi, step_height=0.2, step_depth=0.3, count=10, width=1.2)
    scene = SceneSpec([Ground(0.0), Floor2(footprint=(-1.0, -2.0, 3.0, 2.0), z=2.0, thickness=0.2), stairs])
    sensor = SensorSpec(cols=96, rows=72, mount_xyz=(0.0, 0.0, 0.5), mount_pitch=math.radians(30.0),
                        noise=SensorNoiseParams(1e-4))
    traj = TrajectorySpec([(0.0, 0.5, 0.0, 2.0, 0.0), (2.0, 2.8, 0.0, 2.0, 0.0), (5.0, 5.8, 0.0, 0.0, 0.0),
                           (6.0, 5.8, 0.0, 0.0, math.pi), (9.0, 2.0, 0.0, 0.0, math.pi)])
    params = UpdateParams(noise=SensorNoiseParams(1e-4), overlap_enabled=overlap)
    emap = ElevationMap.empty(GridSpec(0.04, 200, 200))
    upper_seen = 0
    for scan in simulate_scans(scene, sensor, traj, 91, seed=seed):
        integrate_scan(emap, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
        with np.errstate(invalid="ignore"):
            upper_seen = max(upper_seen, int((emap.valid & (emap.elevation > 1.5)).sum()))
    X, Y = cell_centers(emap.spec)
    bx, by = scan.est_pose.translation[:2]
    near = np.hypot(X - bx, Y - by) <= params.overlap.radius
    with np.errstate(invalid="ignore"):
        stale = near & emap.valid & (np.abs(emap.elevation - scan.base_z) > params.overlap.height_threshold)
    return TwoFloorResult(int(stale.sum()), upper_seen, scan.base_z)


# --------------------------------------------------------------- staircase

STAIR_HEIGHTS = (0.0, 0.2, 0.4, 0.6)


@dataclass
class StaircaseMap:
    emap: ElevationMap
    step_heights: tuple[float, ...] = field(default=STAIR_HEIGHTS)


def staircase_map(noise_std: float = 0.0, seed: int = 0) -> StaircaseMap:
    """Ground-truth height map of three 0.2 m steps on flat ground, with
    optional Gaussian height noise, normals computed."""
    spec = GridSpec(0.04, 100, 100, (1.0, 0.0))
    scene = SceneSpec([Ground(0.0), Stairs(origin=(0.5, -0.5, 0.0), step_height=0.2, step_depth=0.4, count=3,
                                           width=1.0)])
    truth, mask = ground_truth_heightmap(scene, spec, 0.0)
    emap = ElevationMap.empty(spec)
    h = truth + noise_std * np.random.default_rng(seed).standard_normal(truth.shape) if noise_std else truth
    emap.layers["elevation"][...] = np.where(mask, h, np.nan)
    emap.layers["valid"][...] = mask
    compute_normals(emap)
    return StaircaseMap(emap)
