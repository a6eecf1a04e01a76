import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from reliefmap import CellIndex, CleanupParams, ElevationMap, GridSpec, PointCloud, RigidTransform, UpdateParams
from reliefmap import integrate_scan, traverse_cells, update_upper_bound, visibility_cleanup
from reliefmap.raycast import cast_rays

from oracles import dense_traversal, passage_height

SPEC = GridSpec(0.04, 50, 40, (0.1, -0.05))


def cells_of(ray):
    return [tuple(c.index) for c in ray]


def test_axis_aligned_segment_three_cells():
    spec = GridSpec(0.04, 250, 250)
    start = (0.02, 0.02, 1.0)  # center of cell (125, 125)
    ray = traverse_cells(start, (0.14, 0.02, 1.0), spec)
    assert cells_of(ray) == [(125, 125), (125, 126), (125, 127)]
    assert all(c.ray_height == 1.0 for c in ray)


def test_vertical_ray_is_origin_cell():
    spec = GridSpec(0.04, 250, 250)
    ray = traverse_cells((0.01, 0.01, 1.0), (0.01, 0.01, 0.0), spec)
    assert cells_of(ray) == [(125, 125)]


def test_ray_outside_map_is_empty():
    assert traverse_cells((10.0, 10.0, 1.0), (11.0, 10.0, 0.0), SPEC) == []


def test_ray_clipped_to_map():
    spec = GridSpec(0.1, 10, 10)
    ray = traverse_cells((-2.0, 0.05, 1.0), (2.0, 0.05, 0.0), spec)
    assert cells_of(ray) == [(5, c) for c in range(10)]


def test_random_segments_match_dense_oracle():
    rng = np.random.default_rng(0)
    half = np.array([SPEC.extent[0], SPEC.extent[1]]) / 2 + 0.3
    center = np.array(SPEC.center)
    for _ in range(500):
        a = np.append(center + rng.uniform(-half, half), rng.uniform(0, 2))
        b = np.append(center + rng.uniform(-half, half), rng.uniform(-1, 1))
        ray = traverse_cells(a, b, SPEC)
        expected = dense_traversal(a, b, SPEC.origin, SPEC.resolution, SPEC.width, SPEC.height)
        assert cells_of(ray) == expected
        for cell in ray:
            assert cell.ray_height == pytest.approx(passage_height(a, b, cell.index, SPEC.origin, SPEC.resolution),
                                                    abs=1e-9)


def test_grid_aligned_segments_match_dense_oracle():
    # endpoints on cell corners exercise exact corner crossings
    rng = np.random.default_rng(1)
    spec = GridSpec(0.25, 16, 16)
    for _ in range(300):
        a = np.append(rng.integers(-9, 9, 2) * 0.25, 1.0)
        b = np.append(rng.integers(-9, 9, 2) * 0.25, 0.0)
        expected = dense_traversal(a, b, spec.origin, spec.resolution, spec.width, spec.height)
        assert cells_of(traverse_cells(a, b, spec)) == expected


def test_exact_diagonal_steps_through_corners():
    spec = GridSpec(1.0, 4, 4)
    ray = traverse_cells((-1.5, -1.5, 0.0), (1.5, 1.5, 0.0), spec)
    assert cells_of(ray) == [(0, 0), (1, 1), (2, 2)]


coord = st.floats(-1.2, 1.2, allow_nan=False)


@settings(max_examples=200)
@given(coord, coord, coord, coord)
def test_chain_is_connected_and_reversible(x0, y0, x1, y1):
    a, b = (x0, y0, 1.0), (x1, y1, 0.0)
    spec = SPEC
    for x, y in ((x0, y0), (x1, y1)):
        # a start on a cell edge only touches that cell at a point
        gx, gy = (x - spec.origin[0]) / spec.resolution, (y - spec.origin[1]) / spec.resolution
        assume(gx != math.floor(gx) and gy != math.floor(gy))
    fwd = cells_of(traverse_cells(a, b, SPEC))
    back = cells_of(traverse_cells(b, a, SPEC))
    for (r0, c0), (r1, c1) in zip(fwd, fwd[1:]):
        assert max(abs(r1 - r0), abs(c1 - c0)) == 1

    def own(p):
        c = math.floor((p[0] - spec.origin[0]) / spec.resolution)
        r = math.floor((p[1] - spec.origin[1]) / spec.resolution)
        return [(r, c)] if 0 <= r < spec.height and 0 <= c < spec.width else []

    if (x0, y0) != (x1, y1) and own(a) and own(b):
        assert fwd + own(b) == list(reversed(back + own(a)))


# --------------------------------------------------------------- cleanup

def wall_cell_map(h=1.0, var=0.01, last_update=0.0, normal=(0.9, 0.0, math.sqrt(1 - 0.81)), normal_valid=True):
    m = ElevationMap.empty(GridSpec(0.1, 20, 20))
    r, c = 10, 12  # world x in [0.2, 0.3)
    L = m.layers
    L["valid"][r, c] = True
    L["elevation"][r, c] = h
    L["variance"][r, c] = var
    L["last_update"][r, c] = last_update
    L["normal_x"][r, c], L["normal_y"][r, c], L["normal_z"][r, c] = normal
    L["normal_valid"][r, c] = normal_valid
    return m, (r, c)


def horizontal_ray(z):
    return (-0.5, 0.05, z), (0.8, 0.05, z)


CLEANUP = CleanupParams(alpha_n=0.5, t_free=1.0)


def test_cleanup_removes_when_all_gates_pass():
    m, cell = wall_cell_map()
    removed = visibility_cleanup(m, *horizontal_ray(0.5), CLEANUP, now=10.0)
    assert removed == [CellIndex(*cell)]
    assert not m.valid[cell]


@pytest.mark.parametrize("case", ["ray_above_band", "fresh", "no_normal", "grazing_normal"])
def test_cleanup_keeps_cell(case):
    kw, z = {}, 0.5
    if case == "ray_above_band":
        z = 0.95  # above h - sigma = 0.9
    elif case == "fresh":
        kw["last_update"] = 10.0
    elif case == "no_normal":
        kw["normal_valid"] = False
    else:
        kw["normal"] = (0.4, 0.0, math.sqrt(1 - 0.16))
    m, cell = wall_cell_map(**kw)
    assert visibility_cleanup(m, *horizontal_ray(z), CLEANUP, now=10.0) == []
    assert m.valid[cell]


def test_cells_updated_this_scan_survive_cleanup():
    # a flat patch seen earlier, then a scan whose rays pass below it while
    # also hitting it: the hit cells are fresh and must not be removed
    m = ElevationMap.empty(GridSpec(0.1, 40, 40))
    pose = RigidTransform(translation=[0, 0, 1.0])
    xs, ys = np.meshgrid(np.linspace(0.5, 1.5, 11), np.linspace(-0.5, 0.5, 11))
    patch = np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, -0.5)])
    params = UpdateParams(drift_enabled=False, overlap_enabled=False,
                          cleanup=CleanupParams(alpha_n=0.0, t_free=0.0))
    integrate_scan(m, PointCloud(patch, 0.0), pose, params)
    beyond = patch * [2.0, 2.0, 1.0] + [0, 0, -1.0]
    stats = integrate_scan(m, PointCloud(np.vstack([patch, beyond]), 5.0), pose, params)
    hit = m.layers["last_update"] == 5.0
    assert hit.sum() > 0
    assert np.all(m.valid[hit])
    assert stats.conserved()


# ---------------------------------------------------------- upper bound

def test_upper_bound_running_min():
    m = ElevationMap.empty(GridSpec(0.1, 20, 20))
    for z in (0.8, 0.6, 0.7):
        update_upper_bound(m, traverse_cells(*horizontal_ray(z), m.spec))
    assert m.layers["upper_bound_valid"][10, 12]
    assert m.layers["upper_bound"][10, 12] == 0.6


def test_upper_bound_skips_valid_cells():
    m, cell = wall_cell_map()
    update_upper_bound(m, traverse_cells(*horizontal_ray(0.5), m.spec))
    assert not m.layers["upper_bound_valid"][cell]
    assert m.layers["upper_bound_valid"][10, 11]


def test_upper_bound_overwritten_on_observation():
    m = ElevationMap.empty(GridSpec(0.1, 20, 20))
    pose = RigidTransform(translation=[0, 0, 1.0])
    params = UpdateParams(drift_enabled=False, overlap_enabled=False)
    integrate_scan(m, PointCloud(np.array([[0.75, 0.05, -1.0]]), 0.0), pose, params)
    r, c = 10, 12
    assert m.layers["upper_bound_valid"][r, c] and not m.valid[r, c]
    integrate_scan(m, PointCloud(np.array([[0.25, 0.05, -0.8]]), 0.1), pose, params)
    assert m.valid[r, c]
    assert m.layers["upper_bound"][r, c] == m.elevation[r, c]


def test_parallel_cast_equals_sequential():
    rng = np.random.default_rng(3)
    m = ElevationMap.empty(GridSpec(0.05, 60, 60))
    L = m.layers
    L["valid"][...] = rng.random(m.spec.shape) < 0.6
    L["elevation"][...] = rng.uniform(0, 1, m.spec.shape)
    L["variance"][...] = 0.001
    L["normal_x"][...] = 0.0
    L["normal_y"][...] = 0.0
    L["normal_z"][...] = 1.0
    L["normal_valid"][...] = True
    L["last_update"][...] = 0.0
    ends = np.column_stack([rng.uniform(-1.5, 1.5, 3000), rng.uniform(-1.5, 1.5, 3000), rng.uniform(-1, 0, 3000)])
    p = CleanupParams(alpha_n=0.1, t_free=0.5)
    seq = cast_rays(m, (0.0, 0.0, 1.5), ends, p, 5.0, parallel=False)
    par = cast_rays(m, (0.0, 0.0, 1.5), ends, p, 5.0, parallel=True)
    assert seq[0].any()
    np.testing.assert_array_equal(seq[0], par[0])
    np.testing.assert_array_equal(seq[1], par[1])


def test_cleanup_params_validated():
    with pytest.raises(ValueError):
        CleanupParams(alpha_n=1.5)
