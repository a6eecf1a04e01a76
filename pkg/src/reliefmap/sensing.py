"""Point clouds, rigid poses, the range-based noise model and the exclusion area."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class InvalidPose(ValueError):
    """Rotation is not a proper orthonormal matrix."""


@dataclass
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    stamp: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def validate(self, tol: float = 1e-9) -> None:
        R = self.rotation
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(self.translation)):
            raise InvalidPose("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
            raise InvalidPose("rotation is not orthonormal with det +1")

    @classmethod
    def from_quaternion(cls, q, translation) -> "RigidTransform":
        """Quaternion given as ``(w, x, y, z)``; normalized here."""
        w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
        R = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        return cls(R, translation)

    @classmethod
    def from_xyz_rpy(cls, xyz, roll=0.0, pitch=0.0, yaw=0.0) -> "RigidTransform":
        cr, sr = math.cos(roll), math.sin(roll)
        cp, sp = math.cos(pitch), math.sin(pitch)
        cy, sy = math.cos(yaw), math.sin(yaw)
        Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1.0]])
        Ry = np.array([[cp, 0, sp], [0, 1.0, 0], [-sp, 0, cp]])
        Rx = np.array([[1.0, 0, 0], [0, cr, -sr], [0, sr, cr]])
        return cls(Rz @ Ry @ Rx, xyz)

    def to_quaternion(self) -> np.ndarray:
        """``(w, x, y, z)`` with non-negative w."""
        R = self.rotation
        tr = np.trace(R)
        if tr > 0:
            s = 2.0 * math.sqrt(tr + 1.0)
            q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        elif R[1, 1] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        else:
            s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        q = np.array(q)
        return -q if q[0] < 0 else q

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class SensorNoiseParams:
    alpha_d: float = 0.0005
    var_min: float = 1e-6

    def __post_init__(self):
        if self.alpha_d < 0:
            raise ValueError("alpha_d must be >= 0")
        if not self.var_min > 0:
            raise ValueError("var_min must be > 0")


@dataclass(frozen=True)
class ExclusionParams:
    """Ramp-shaped region above the sensor whose points are discarded.

    The boundary height above the sensor at horizontal distance ``r`` is
    ``min(d_max, b + max(0, r - c) * tan(theta))``.
    """

    theta: float = math.radians(30.0)
    b: float = 0.3
    c: float = 0.5
    d_max: float = 1.5
    enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.theta < math.pi / 2:
            raise ValueError("theta must lie in [0, pi/2)")
        if self.b < 0 or self.c < 0:
            raise ValueError("b and c must be >= 0")
        if not self.d_max > self.b:
            raise ValueError("d_max must exceed b")


def transform_cloud(cloud: PointCloud | np.ndarray, pose: RigidTransform) -> np.ndarray:
    """Map-frame points ``R p + t``, order preserved."""
    pose.validate()
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    return pose.apply(pts)


def point_variance(dist, params: SensorNoiseParams):
    """Measurement variance ``max(alpha_d * d^2, var_min)``; scalar or array."""
    dist = np.asarray(dist, dtype=np.float64)
    if np.any(dist < 0):
        raise ValueError("distance must be >= 0")
    out = np.maximum(params.alpha_d * dist * dist, params.var_min)
    return float(out) if out.ndim == 0 else out


def exclusion_threshold(r, params: ExclusionParams):
    r = np.asarray(r, dtype=np.float64)
    return np.minimum(params.d_max, params.b + np.maximum(0.0, r - params.c) * math.tan(params.theta))


def is_excluded(p_sensor, params: ExclusionParams):
    """True where a point (relative to the sensor, z up) lies above the ramp.

    Accepts a single point or an (N, 3) array.
    """
    p = np.asarray(p_sensor, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, 3)
    if not params.enabled:
        out = np.zeros(len(p), dtype=bool)
    else:
        r = np.hypot(p[:, 0], p[:, 1])
        out = p[:, 2] > exclusion_threshold(r, params)
    return bool(out[0]) if single else out
