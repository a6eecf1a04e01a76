import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reliefmap import ExclusionParams, InvalidPose, PointCloud, RigidTransform, SensorNoiseParams
from reliefmap import is_excluded, point_variance, transform_cloud

finite = st.floats(-100, 100, allow_nan=False)


def test_identity_pose():
    pts = np.array([[1.0, 2.0, 3.0], [-4.0, 0.5, 0.0]])
    np.testing.assert_array_equal(transform_cloud(PointCloud(pts), RigidTransform()), pts)


def test_pure_translation():
    pose = RigidTransform(np.eye(3), [0, 0, 1])
    np.testing.assert_allclose(transform_cloud(np.array([[1.0, 2.0, 0.0]]), pose), [[1, 2, 1]])


def test_quarter_turn_yaw():
    pose = RigidTransform.from_xyz_rpy([0, 0, 0], yaw=math.pi / 2)
    np.testing.assert_allclose(transform_cloud(np.array([[1.0, 0, 0]]), pose), [[0, 1, 0]], atol=1e-15)


def test_non_orthonormal_rotation_rejected():
    with pytest.raises(InvalidPose):
        transform_cloud(np.zeros((1, 3)), RigidTransform(np.diag([1.0, 1.0, 1.1])))
    with pytest.raises(InvalidPose):
        transform_cloud(np.zeros((1, 3)), RigidTransform(np.diag([1.0, 1.0, -1.0])))


def test_point_cloud_rejects_nan():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))


@given(st.tuples(finite, finite, finite), st.floats(-3.2, 3.2), st.floats(-1.5, 1.5), st.floats(-3.2, 3.2),
       st.integers(0, 2**31))
def test_transform_preserves_distances(t, roll, pitch, yaw, seed):
    pts = np.random.default_rng(seed).uniform(-10, 10, (12, 3))
    out = transform_cloud(pts, RigidTransform.from_xyz_rpy(t, roll, pitch, yaw))
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    np.testing.assert_allclose(d1, d0, rtol=1e-9, atol=1e-9)


@given(st.floats(-3.2, 3.2), st.floats(-1.5, 1.5), st.floats(-3.2, 3.2))
def test_quaternion_roundtrip(roll, pitch, yaw):
    pose = RigidTransform.from_xyz_rpy([1, 2, 3], roll, pitch, yaw)
    back = RigidTransform.from_quaternion(pose.to_quaternion(), pose.translation)
    np.testing.assert_allclose(back.rotation, pose.rotation, atol=1e-12)


def test_point_variance_examples():
    assert point_variance(2.0, SensorNoiseParams(0.01, 1e-6)) == pytest.approx(0.04)
    assert point_variance(0.0, SensorNoiseParams(0.01, 1e-4)) == 1e-4
    assert np.all(point_variance(np.array([0.0, 1.0, 50.0]), SensorNoiseParams(0.0, 2e-4)) == 2e-4)
    with pytest.raises(ValueError):
        point_variance(-1.0, SensorNoiseParams())


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1.0))
def test_point_variance_non_decreasing(d1, d2, alpha):
    p = SensorNoiseParams(alpha, 1e-6)
    lo, hi = sorted((d1, d2))
    assert point_variance(lo, p) <= point_variance(hi, p)


RAMP = ExclusionParams(theta=math.radians(45), b=0.5, c=0.2, d_max=1.0)


def test_exclusion_examples():
    assert is_excluded([0.2, 0.0, 0.6], RAMP)
    assert not is_excluded([0.0, 1.0, 0.6], RAMP)
    assert not is_excluded([0.0, 0.0, -0.5], RAMP)
    assert not is_excluded([0.2, 0.0, 0.5], RAMP)  # on the boundary passes
    assert not is_excluded([0.2, 0.0, 5.0], ExclusionParams(enabled=False))


def test_exclusion_vectorized():
    pts = np.array([[0.2, 0, 0.6], [1.0, 0, 0.6], [0, 0, -0.5]])
    np.testing.assert_array_equal(is_excluded(pts, RAMP), [True, False, False])


@given(st.floats(0, 5), st.floats(-2, 2), st.floats(0, 2), st.floats(0, 2))
def test_exclusion_monotone(r, z, dz, dr):
    assert not (is_excluded([r, 0, z], RAMP) and not is_excluded([r, 0, z + dz], RAMP))
    assert not (not is_excluded([r, 0, z], RAMP) and is_excluded([r + dr, 0, z], RAMP))


def test_exclusion_params_validated():
    with pytest.raises(ValueError):
        ExclusionParams(theta=math.pi / 2)
    with pytest.raises(ValueError):
        ExclusionParams(b=1.0, d_max=0.5)
