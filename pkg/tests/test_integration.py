import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reliefmap import (
    Disposition,
    ElevationMap,
    GridSpec,
    InvalidVariance,
    PointCloud,
    RigidTransform,
    SensorNoiseParams,
    UpdateParams,
    integrate_scan,
    kalman_update_cell,
    precount_scan,
)
from reliefmap.sim import Ground, SceneSpec, SensorSpec, TrajectorySpec, simulate_scans

from oracles import harmonic_variance, sequential_counts

PARAMS = UpdateParams(mahalanobis_threshold=2.5, wall_count_threshold=5)


def bare_params(**kw):
    """Height fusion only: no drift, cleanup or overlap."""
    return UpdateParams(drift_enabled=False, cleanup_enabled=False, overlap_enabled=False, **kw)


# ------------------------------------------------------------ kalman cell

def test_equal_variances_average():
    h, var, d = kalman_update_cell(0.0, 1.0, 2.0, 1.0, 1, UpdateParams(mahalanobis_threshold=3.0))
    assert (h, var, d) == (1.0, 0.5, Disposition.FUSED)


def test_mahalanobis_outlier():
    h, var, d = kalman_update_cell(0.0, 0.01, 1.0, 1e-6, 1, PARAMS)
    assert d is Disposition.OUTLIER
    assert h == 0.0
    assert var == pytest.approx(0.01 + PARAMS.var_outlier)


def test_outlier_inflation_capped():
    _, var, d = kalman_update_cell(0.0, 0.995, 100.0, 1e-6, 1, PARAMS)
    assert d is Disposition.OUTLIER and var == PARAMS.var_max


def test_wall_rule_ignores_low_point():
    h, var, d = kalman_update_cell(1.0, 0.01, 0.2, 1e-6, 8, PARAMS)
    assert (h, var, d) == (1.0, 0.01, Disposition.IGNORED_LOW)
    # same point in a sparse cell is an ordinary outlier
    assert kalman_update_cell(1.0, 0.01, 0.2, 1e-6, 5, PARAMS)[2] is Disposition.OUTLIER


def test_invalid_cell_initialized_from_point():
    h, var, d = kalman_update_cell(np.nan, np.nan, 0.3, 0.01, 1, PARAMS, valid=False)
    assert d is Disposition.FUSED and h == 0.3
    assert var == pytest.approx(harmonic_variance(PARAMS.var_init, [0.01]))


def test_non_positive_variance_rejected():
    with pytest.raises(InvalidVariance):
        kalman_update_cell(0.0, 0.0, 0.1, 0.01, 1, PARAMS)
    with pytest.raises(InvalidVariance):
        kalman_update_cell(0.0, 0.1, 0.1, -1.0, 1, PARAMS)


@given(st.floats(-5, 5), st.floats(1e-4, 1.0), st.floats(-5, 5), st.floats(1e-4, 1.0))
def test_fusion_contracts_and_interpolates(h, var, pz, pvar):
    h2, var2, d = kalman_update_cell(h, var, pz, pvar, 1, UpdateParams(mahalanobis_threshold=1e9))
    assert d is Disposition.FUSED
    assert var2 < min(var, pvar) or math.isclose(var2, min(var, pvar), rel_tol=1e-12)
    assert min(h, pz) - 1e-12 <= h2 <= max(h, pz) + 1e-12


@given(st.integers(1, 40), st.floats(1e-4, 0.5), st.floats(-1, 1))
def test_repeated_measurements_match_harmonic_sum(n, pvar, value):
    params = UpdateParams(mahalanobis_threshold=1e9)
    h, var, _ = kalman_update_cell(0.0, 1.0, value, pvar, 1, params, valid=False)
    for _ in range(n - 1):
        h, var, _ = kalman_update_cell(h, var, value, pvar, 1, params)
    assert var == pytest.approx(harmonic_variance(params.var_init, [pvar] * n), rel=1e-9)
    assert h == pytest.approx(value, abs=1e-12)


# --------------------------------------------------------------- precount

def test_precount_single_cell():
    m = ElevationMap.empty(GridSpec(0.1, 10, 10))
    counts, maxh = precount_scan(np.array([[0.01, 0.01, 0.1], [0.02, 0.02, 0.3], [0.03, 0.01, 0.2]]), m)
    assert counts[5, 5] == 3 and maxh[5, 5] == 0.3
    assert counts.sum() == 3


def test_precount_empty():
    m = ElevationMap.empty(GridSpec(0.1, 10, 10))
    counts, maxh = precount_scan(np.zeros((0, 3)), m)
    assert not counts.any() and not maxh.any()


def test_precount_matches_sequential_tally():
    spec = GridSpec(0.05, 40, 30, (0.2, -0.1))
    pts = np.random.default_rng(5).uniform([-1.3, -1.0, -1], [1.5, 1.0, 1], (10000, 3))
    counts, maxh = precount_scan(pts, ElevationMap.empty(spec))
    ref_counts, ref_max = sequential_counts(pts, spec.origin, spec.resolution, spec.width, spec.height)
    np.testing.assert_array_equal(counts, ref_counts)
    np.testing.assert_array_equal(maxh, ref_max)


# ------------------------------------------------------------- full scans

def test_empty_cloud_only_ages_variance():
    m = ElevationMap.empty(GridSpec(0.1, 20, 20))
    integrate_scan(m, PointCloud(np.array([[0.0, 0.0, -0.5]]), 0.0), RigidTransform(translation=[0, 0, 0.5]),
                   bare_params())
    before = m.copy()
    stats = integrate_scan(m, PointCloud(stamp=1.0), RigidTransform(translation=[0, 0, 0.5]), bare_params())
    assert stats.points_in == stats.points_fused == stats.cells_updated == 0
    assert stats.conserved()
    np.testing.assert_array_equal(m.valid, before.valid)
    np.testing.assert_array_equal(m.elevation, before.elevation)
    assert np.all(m.variance[m.valid] > before.variance[m.valid])


def test_single_point_creates_one_cell():
    m = ElevationMap.empty(GridSpec(0.1, 20, 20))
    pose = RigidTransform(translation=[0, 0, 0.5])
    stats = integrate_scan(m, PointCloud(np.array([[0.3, 0.2, -0.5]]), 0.0), pose, bare_params())
    assert m.valid.sum() == 1 and stats.points_fused == 1
    r, c = np.argwhere(m.valid)[0]
    assert m.elevation[r, c] == pytest.approx(0.0)
    assert m.variance[r, c] < bare_params().var_init


def _flat_scans(n, alpha_d, seed):
    sensor = SensorSpec(cols=48, rows=36, mount_xyz=(0, 0, 1.0), mount_pitch=math.radians(40),
                        noise=SensorNoiseParams(alpha_d))
    return list(simulate_scans(SceneSpec([Ground(0.0)]), sensor, TrajectorySpec(), n, seed=seed))


def test_noisy_flat_ground_within_three_sigma():
    params = UpdateParams(noise=SensorNoiseParams(1e-3, 1e-6))
    m = ElevationMap.empty(GridSpec(0.04, 150, 150))
    for scan in _flat_scans(50, 1e-3, seed=11):
        stats = integrate_scan(m, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
        assert stats.conserved()
    v = m.valid
    assert v.sum() > 500
    inside = np.abs(m.elevation[v]) < 3 * np.sqrt(m.variance[v])
    # a Gaussian puts 99.7% inside 3 sigma; allow a little slack for gate effects
    assert inside.mean() > 0.99


@pytest.mark.parametrize("feature", ["none", "all"])
def test_parallel_mode_bit_identical(feature):
    scans = _flat_scans(6, 1e-3, seed=2)
    common = {} if feature == "all" else dict(drift_enabled=False, cleanup_enabled=False, overlap_enabled=False)
    maps = []
    for parallel in (False, True):
        params = UpdateParams(noise=SensorNoiseParams(1e-3, 1e-6), parallel=parallel, **common)
        m = ElevationMap.empty(GridSpec(0.04, 100, 100))
        for scan in scans:
            integrate_scan(m, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
        maps.append(m)
    for k in maps[0].layers:
        np.testing.assert_array_equal(maps[0].layers[k], maps[1].layers[k], err_msg=k)


def test_permuting_points_in_distinct_cells_is_harmless():
    rng = np.random.default_rng(4)
    spec = GridSpec(0.1, 30, 30)
    # one point per cell, on a jittered lattice
    xs, ys = np.meshgrid(np.arange(-1.0, 1.0, 0.1) + 0.05, np.arange(-1.0, 1.0, 0.1) + 0.05)
    pts = np.column_stack([xs.ravel(), ys.ravel(), rng.normal(-0.5, 0.01, xs.size)])
    pose = RigidTransform(translation=[0, 0, 0.5])
    maps = []
    for order in (np.arange(len(pts)), rng.permutation(len(pts))):
        m = ElevationMap.empty(spec)
        integrate_scan(m, PointCloud(pts[order], 0.0), pose, bare_params())
        integrate_scan(m, PointCloud(pts[order] + [0, 0, 0.01], 0.1), pose, bare_params())
        maps.append(m)
    for k in ("elevation", "variance", "valid"):
        np.testing.assert_array_equal(maps[0].layers[k], maps[1].layers[k])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 400))
def test_counter_conservation(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.uniform([-3, -3, -2], [3, 3, 2], (n, 3))
    m = ElevationMap.empty(GridSpec(0.1, 20, 20))
    params = UpdateParams(max_range=3.0)
    for k in range(2):
        stats = integrate_scan(m, PointCloud(pts + k * 0.01, k * 0.1), RigidTransform(translation=[0, 0, 0.5]), params)
        assert stats.conserved()
        assert stats.points_in == n


def test_invalid_pose_propagates():
    from reliefmap import InvalidPose

    with pytest.raises(InvalidPose):
        integrate_scan(ElevationMap.empty(GridSpec(0.1, 10, 10)), PointCloud(), RigidTransform(np.eye(3) * 2),
                       UpdateParams())
