import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reliefmap import DriftParams, ElevationMap, GridSpec, apply_height_offset, compute_drift_error


def flat_map(trav=1.0):
    m = ElevationMap.empty(GridSpec(0.1, 20, 20))
    m.layers["valid"][...] = True
    m.layers["elevation"][...] = 0.0
    m.layers["variance"][...] = 0.01
    m.layers["traversability"][...] = trav
    return m


def test_single_point_error():
    est = compute_drift_error(flat_map(), np.array([[0.0, 0.0, 0.05]]), DriftParams())
    assert est.n == 1 and est.mean_error == pytest.approx(0.05)


def test_unusable_cells_give_no_estimate():
    m = flat_map(trav=0.5)
    assert compute_drift_error(m, np.array([[0.0, 0.0, 0.05]]), DriftParams()).n == 0
    m = flat_map()
    m.layers["valid"][...] = False
    assert compute_drift_error(m, np.array([[0.0, 0.0, 0.05]]), DriftParams()).n == 0
    assert compute_drift_error(flat_map(), np.array([[9.0, 9.0, 0.05]]), DriftParams()).n == 0


def test_noisy_points_recover_injected_drift():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-0.9, 0.9, 1000), rng.uniform(-0.9, 0.9, 1000),
                           0.10 + rng.normal(0, 0.02, 1000)])
    est = compute_drift_error(flat_map(), pts, DriftParams())
    assert est.n == 1000
    assert abs(est.mean_error - 0.10) <= 0.01


def test_zero_offset_is_bit_identical():
    m = flat_map()
    before = m.copy()
    assert apply_height_offset(m, 0.0) == (0.0, False)
    for k in m.layers:
        np.testing.assert_array_equal(m.layers[k], before.layers[k])


def test_offset_shifts_valid_cells_and_bounds():
    m = flat_map()
    m.layers["valid"][0, 0] = False
    m.layers["elevation"][0, 0] = np.nan
    m.layers["upper_bound"][...] = 0.3
    m.layers["upper_bound_valid"][1, :] = True
    applied, clamped = apply_height_offset(m, 0.05)
    assert applied == 0.05 and not clamped
    assert np.all(m.elevation[m.valid] == 0.05)
    assert np.isnan(m.elevation[0, 0])
    assert np.all(m.layers["upper_bound"][1] == 0.35)
    assert np.all(m.layers["upper_bound"][2] == 0.3)


def test_offset_clamped():
    m = flat_map()
    assert apply_height_offset(m, 1.0, 0.1) == (0.1, True)
    assert apply_height_offset(m, -1.0, 0.1) == (-0.1, True)


@given(st.floats(-1, 1), st.floats(0.001, 0.5))
def test_applied_offset_never_exceeds_clamp(offset, limit):
    applied, clamped = apply_height_offset(flat_map(), offset, limit)
    assert abs(applied) <= limit
    assert clamped == (abs(offset) > limit)
