"""Analytic scene simulator: terrain primitives, a virtual range sensor,
trajectories with injected height drift, and ground-truth heightmaps.

Every primitive is a union of convex solids written as half-space sets
``A x <= b``, so ray intersection is closed-form slab clipping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, cell_centers
from .sensing import PointCloud, RigidTransform, SensorNoiseParams


class OutOfTrajectory(ValueError):
    pass


Solid = tuple[np.ndarray, np.ndarray]  # (A (k, 3), b (k,))

_SUNK = 1.0  # solids extend this far below their base so they seal against the ground


def _oriented_box(cx, cy, heading, half_len, half_wid, z_lo, z_hi) -> Solid:
    u = np.array([math.cos(heading), math.sin(heading)])
    v = np.array([-u[1], u[0]])
    c = np.array([cx, cy])
    A = np.array([
        [u[0], u[1], 0.0], [-u[0], -u[1], 0.0],
        [v[0], v[1], 0.0], [-v[0], -v[1], 0.0],
        [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
    ])
    b = np.array([u @ c + half_len, -(u @ c) + half_len, v @ c + half_wid, -(v @ c) + half_wid, z_hi, -z_lo])
    return A, b


def _footprint_box(footprint, z_lo, z_hi) -> Solid:
    x0, y0, x1, y1 = footprint
    return _oriented_box((x0 + x1) / 2, (y0 + y1) / 2, 0.0, abs(x1 - x0) / 2, abs(y1 - y0) / 2, z_lo, z_hi)


@dataclass
class Ground:
    z: float = 0.0
    walkable = True

    def solids(self, time: float) -> list[Solid]:
        return [(np.array([[0.0, 0.0, 1.0]]), np.array([self.z]))]


@dataclass
class Ramp:
    """Inclined wedge rising ``slope`` (rise/run) along ``heading`` from ``origin``."""

    origin: tuple[float, float, float] = (1.0, 0.0, 0.0)
    heading: float = 0.0
    slope: float = 0.5
    length: float = 1.0
    width: float = 1.0
    walkable = True

    def solids(self, time: float) -> list[Solid]:
        ox, oy, oz = self.origin
        u = np.array([math.cos(self.heading), math.sin(self.heading)])
        v = np.array([-u[1], u[0]])
        o = np.array([ox, oy])
        A = np.array([
            [-u[0], -u[1], 0.0], [u[0], u[1], 0.0],
            [v[0], v[1], 0.0], [-v[0], -v[1], 0.0],
            [-self.slope * u[0], -self.slope * u[1], 1.0], [0.0, 0.0, -1.0],
        ])
        b = np.array([-(u @ o), u @ o + self.length, v @ o + self.width / 2, -(v @ o) + self.width / 2,
                      oz - self.slope * (u @ o), -(oz - _SUNK)])
        return [(A, b)]


@dataclass
class Stairs:
    origin: tuple[float, float, float] = (1.0, 0.0, 0.0)
    heading: float = 0.0
    step_height: float = 0.2
    step_depth: float = 0.3
    count: int = 3
    width: float = 1.0
    walkable = True

    def solids(self, time: float) -> list[Solid]:
        ox, oy, oz = self.origin
        u = (math.cos(self.heading), math.sin(self.heading))
        out = []
        for k in range(1, self.count + 1):
            s_mid = (k - 0.5) * self.step_depth
            out.append(_oriented_box(ox + u[0] * s_mid, oy + u[1] * s_mid, self.heading, self.step_depth / 2,
                                     self.width / 2, oz - _SUNK, oz + k * self.step_height))
        return out


@dataclass
class Box:
    """Axis-aligned box; moves with ``velocity`` and exists only in
    ``[t_start, t_end)`` when those are given."""

    center: tuple[float, float, float] = (1.5, 0.0, 0.25)
    size: tuple[float, float, float] = (0.5, 0.5, 0.5)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    t_start: float | None = None
    t_end: float | None = None
    walkable = True

    def active(self, time: float) -> bool:
        return (self.t_start is None or time >= self.t_start) and (self.t_end is None or time < self.t_end)

    def solids(self, time: float) -> list[Solid]:
        if not self.active(time):
            return []
        dt = time - (self.t_start or 0.0)
        c = np.asarray(self.center, float) + dt * np.asarray(self.velocity, float)
        sx, sy, sz = self.size
        return [_oriented_box(c[0], c[1], 0.0, sx / 2, sy / 2, c[2] - sz / 2, c[2] + sz / 2)]


@dataclass
class Wall:
    p0: tuple[float, float] = (2.0, -1.0)
    p1: tuple[float, float] = (2.0, 1.0)
    height: float = 1.0
    thickness: float = 0.1
    base: float = 0.0
    walkable = True

    def solids(self, time: float) -> list[Solid]:
        (x0, y0), (x1, y1) = self.p0, self.p1
        heading = math.atan2(y1 - y0, x1 - x0)
        half = math.hypot(x1 - x0, y1 - y0) / 2
        return [_oriented_box((x0 + x1) / 2, (y0 + y1) / 2, heading, half, self.thickness / 2,
                              self.base - _SUNK, self.base + self.height)]


@dataclass
class SlabOverhang:
    """Horizontal slab with its underside at ``z``; never walkable."""

    footprint: tuple[float, float, float, float] = (1.0, -1.0, 2.0, 1.0)
    z: float = 1.0
    thickness: float = 0.1
    walkable = False

    def solids(self, time: float) -> list[Solid]:
        return [_footprint_box(self.footprint, self.z, self.z + self.thickness)]


@dataclass
class Floor2:
    """Upper floor slab (top surface at ``z``), optionally reached by stairs."""

    footprint: tuple[float, float, float, float] = (2.0, -2.0, 5.0, 2.0)
    z: float = 2.0
    thickness: float = 0.2
    stairs: Stairs | None = None
    walkable = True

    def solids(self, time: float) -> list[Solid]:
        out = [_footprint_box(self.footprint, self.z - self.thickness, self.z)]
        if self.stairs is not None:
            out += self.stairs.solids(time)
        return out


PRIMITIVES = {
    "ground": Ground, "ramp": Ramp, "stairs": Stairs, "box": Box,
    "wall": Wall, "slab_overhang": SlabOverhang, "floor2": Floor2,
}


@dataclass
class SceneSpec:
    primitives: list = field(default_factory=lambda: [Ground()])

    def __post_init__(self):
        if not any(p.walkable for p in self.primitives):
            raise ValueError("scene needs at least one walkable primitive")

    def solids(self, time: float, walkable_only: bool = False) -> list[Solid]:
        out = []
        for p in self.primitives:
            if walkable_only and not p.walkable:
                continue
            out += p.solids(time)
        return out


@dataclass
class SensorSpec:
    pattern: str = "grid"  # grid | rings
    h_fov: float = math.radians(87.0)
    v_fov: float = math.radians(58.0)
    cols: int = 64
    rows: int = 48
    ring_elevations: tuple[float, ...] = ()
    azimuth_steps: int = 360
    max_range: float = 10.0
    noise: SensorNoiseParams = field(default_factory=lambda: SensorNoiseParams(alpha_d=0.0))
    rate: float = 10.0
    # mount offset of the sensor relative to the robot base
    mount_xyz: tuple[float, float, float] = (0.0, 0.0, 0.5)
    mount_pitch: float = 0.0

    def __post_init__(self):
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")
        if self.pattern not in ("grid", "rings"):
            raise ValueError(f"unknown ray pattern {self.pattern!r}")
        if len(self.directions()) == 0:
            raise ValueError("ray pattern is empty")

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame (x forward, z up)."""
        if self.pattern == "grid":
            az = np.linspace(-self.h_fov / 2, self.h_fov / 2, self.cols) if self.cols > 1 else np.zeros(1)
            el = np.linspace(-self.v_fov / 2, self.v_fov / 2, self.rows) if self.rows > 1 else np.zeros(1)
        else:
            az = 2 * np.pi * np.arange(self.azimuth_steps) / self.azimuth_steps
            el = np.asarray(self.ring_elevations, dtype=float)
        E, A = np.meshgrid(el, az, indexing="ij")
        E, A = E.ravel(), A.ravel()
        return np.column_stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)])

    @property
    def mount(self) -> RigidTransform:
        return RigidTransform.from_xyz_rpy(self.mount_xyz, pitch=self.mount_pitch)


@dataclass
class TrajectorySpec:
    """Base poses ``(t, x, y, z, yaw)`` interpolated linearly; the estimated
    pose drifts upward at ``drift_rate`` m/s after ``drift_start``."""

    waypoints: list[tuple[float, float, float, float, float]] = field(
        default_factory=lambda: [(0.0, 0.0, 0.0, 0.0, 0.0), (1e6, 0.0, 0.0, 0.0, 0.0)])
    drift_rate: float = 0.0
    drift_start: float = 0.0

    def __post_init__(self):
        t = [w[0] for w in self.waypoints]
        if len(t) < 1 or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("waypoint times must be strictly increasing")


def ray_hits(solids: list[Solid], origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance along each unit ray to the nearest solid entry (inf on miss).

    Rays starting inside a solid do not see that solid.
    """
    best = np.full(len(dirs), np.inf)
    for A, b in solids:
        num = b - A @ origin  # (k,)
        den = dirs @ A.T  # (N, k)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / den
        t_enter = np.max(np.where(den < 0, t, -np.inf), axis=1)
        t_exit = np.min(np.where(den > 0, t, np.inf), axis=1)
        blocked = np.any((den == 0) & (num < 0), axis=1)
        hit = (t_enter <= t_exit) & (t_enter >= 0) & ~blocked
        best = np.where(hit & (t_enter < best), t_enter, best)
    return best


def render_scan(scene: SceneSpec, pose: RigidTransform, spec: SensorSpec, time: float,
                seed: int = 0, scan_index: int = 0) -> PointCloud:
    """One simulated scan in the sensor frame; ``pose`` is the sensor pose.

    Range noise with std ``sqrt(alpha_d) * dist`` is applied along each ray.
    Ray ``i`` always draws the ``i``-th normal variate of the stream seeded
    by ``(seed, scan_index)``.
    """
    pose.validate()
    d_sensor = spec.directions()
    d_world = d_sensor @ pose.rotation.T
    dist = ray_hits(scene.solids(time), pose.translation, d_world)
    z = np.random.default_rng([int(seed), int(scan_index)]).standard_normal(len(d_sensor))
    hit = dist <= spec.max_range
    noisy = dist + z * math.sqrt(spec.noise.alpha_d) * np.where(hit, dist, 0.0)
    keep = hit & (noisy > 0) & (noisy <= spec.max_range)
    return PointCloud(d_sensor[keep] * noisy[keep, None], stamp=time)


def ground_truth_heightmap(scene: SceneSpec, spec: GridSpec, time: float) -> tuple[np.ndarray, np.ndarray]:
    """Top walkable surface height at every cell center, plus coverage mask."""
    X, Y = cell_centers(spec)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    best = np.full(len(pts), -np.inf)
    # a vertical line through each cell center: every solid spans an
    # interval of z bounded by its upward faces above and downward faces below
    for A, b in scene.solids(time, walkable_only=True):
        rhs = b[None, :] - pts @ A[:, :2].T  # (N, k): a_z * z <= rhs
        az = A[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            z_face = rhs / az
        z_top = np.min(np.where(az > 0, z_face, np.inf), axis=1)
        z_bot = np.max(np.where(az < 0, z_face, -np.inf), axis=1)
        inside = np.all((az != 0) | (rhs >= 0), axis=1)
        hit = inside & np.isfinite(z_top) & (z_top >= z_bot)
        best = np.where(hit & (z_top > best), z_top, best)
    mask = np.isfinite(best).reshape(spec.shape)
    truth = np.where(mask, best.reshape(spec.shape), np.nan)
    return truth, mask


def pose_at(traj: TrajectorySpec, time: float) -> tuple[RigidTransform, RigidTransform]:
    """True and drift-corrupted estimated base pose at ``time``."""
    wp = np.asarray(traj.waypoints, dtype=float)
    t = wp[:, 0]
    if not (t[0] <= time <= t[-1]):
        raise OutOfTrajectory(f"time {time} outside trajectory span [{t[0]}, {t[-1]}]")
    yaw = np.unwrap(wp[:, 4])
    x, y, z = (np.interp(time, t, wp[:, k]) for k in (1, 2, 3))
    th = float(np.interp(time, t, yaw))
    true = RigidTransform.from_xyz_rpy((x, y, z), yaw=th)
    dz = traj.drift_rate * max(0.0, time - traj.drift_start)
    est = RigidTransform(true.rotation, true.translation + np.array([0.0, 0.0, dz]))
    return true, est


@dataclass
class SimulatedScan:
    index: int
    time: float
    cloud: PointCloud
    true_pose: RigidTransform  # sensor pose
    est_pose: RigidTransform
    base_z: float  # estimated base height


def simulate_scans(scene: SceneSpec, sensor: SensorSpec, traj: TrajectorySpec, n_scans: int,
                   seed: int = 0, t0: float | None = None):
    """Yield :class:`SimulatedScan` records at the sensor rate."""
    start = traj.waypoints[0][0] if t0 is None else t0
    mount = sensor.mount
    for k in range(n_scans):
        t = start + k / sensor.rate
        true_base, est_base = pose_at(traj, t)
        true_pose = true_base.compose(mount)
        est_pose = est_base.compose(mount)
        cloud = render_scan(scene, true_pose, sensor, t, seed=seed, scan_index=k)
        yield SimulatedScan(k, t, cloud, true_pose, est_pose, float(est_base.translation[2]))
