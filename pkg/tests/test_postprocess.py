import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from reliefmap import (
    DegeneratePlane,
    ElevationMap,
    FilterChainSpec,
    FilterStep,
    GridSpec,
    NothingToInpaint,
    PlaneSegParams,
    compute_normals,
    fit_plane,
    inpaint_min,
    segment_planes,
    smooth_chain,
)
from reliefmap.grid import cell_centers
from reliefmap.postprocess import mask_polygons, polygon_area, regions_from_text, regions_to_text
from reliefmap.scenarios import STAIR_HEIGHTS, staircase_map

from oracles import inpaint_min_oracle

FOUR = ndimage.generate_binary_structure(2, 1)


# ---------------------------------------------------------------- inpaint

def test_hole_filled_with_border_minimum():
    h = np.full((5, 5), 0.4)
    h[1, 1:4] = 0.2
    h[3, 1:4] = 0.3
    valid = np.ones((5, 5), bool)
    valid[2, 2] = False
    out, ok = inpaint_min(h, valid)
    assert ok.all() and out[2, 2] == 0.2


def test_two_holes_filled_independently():
    h = np.full((7, 12), 1.0)
    h[1:4, 1:4] = 0.1
    h[1:4, 7:10] = 0.5
    valid = np.ones_like(h, bool)
    valid[2, 2] = valid[2, 8] = False
    h[2, 2] = h[2, 8] = 9.0
    out, _ = inpaint_min(h, valid)
    assert out[2, 2] == 0.1 and out[2, 8] == 0.5


def test_inpaint_all_invalid_raises():
    with pytest.raises(NothingToInpaint):
        inpaint_min(np.zeros((3, 3)), np.zeros((3, 3), bool))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.95), st.integers(3, 14), st.integers(3, 14))
def test_inpaint_matches_flood_fill_oracle(seed, density, H, W):
    rng = np.random.default_rng(seed)
    layer = rng.normal(size=(H, W))
    valid = rng.random((H, W)) < density
    if not valid.any():
        valid[0, 0] = True
    out, ok = inpaint_min(layer, valid)
    ref, ref_ok = inpaint_min_oracle(layer, valid)
    np.testing.assert_array_equal(ok, ref_ok)
    np.testing.assert_array_equal(out[ok], ref[ok])
    # valid cells are never changed
    np.testing.assert_array_equal(out[valid], layer[valid])


# -------------------------------------------------------------- smoothing

def test_empty_chain_is_identity():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(6, 6))
    valid = rng.random((6, 6)) < 0.7
    out, ok = smooth_chain(h, valid, FilterChainSpec())
    np.testing.assert_array_equal(ok, valid)
    np.testing.assert_array_equal(out[valid], h[valid])


@settings(max_examples=40)
@given(st.floats(-100, 100), st.sampled_from(["gaussian(1.0)", "box(2)", "median(1)", "gaussian(0.7, 3); box(1)"]),
       st.integers(0, 2**31))
def test_linear_steps_preserve_constant(value, chain, seed):
    valid = np.random.default_rng(seed).random((9, 11)) < 0.8
    out, ok = smooth_chain(np.full((9, 11), value), valid, FilterChainSpec.parse(chain))
    np.testing.assert_array_equal(ok, valid)
    assert np.all(out[valid] == value)
    assert np.isnan(out[~valid]).all()


def test_median_removes_spike():
    h = np.zeros((7, 7))
    h[3, 3] = 0.5
    out, _ = smooth_chain(h, np.ones_like(h, bool), FilterChainSpec((FilterStep("median", 1),)))
    assert abs(out[3, 3]) < 1e-9


def test_invalid_cells_carry_no_weight():
    h = np.zeros((5, 5))
    h[2, 2] = 100.0
    valid = np.ones_like(h, bool)
    valid[2, 2] = False
    out, _ = smooth_chain(h, valid, FilterChainSpec.parse("box(1)"))
    np.testing.assert_array_equal(out[valid], 0.0)


def test_min_inpaint_step_changes_validity():
    h = np.zeros((5, 5))
    valid = np.ones_like(h, bool)
    valid[2, 2] = False
    out, ok = smooth_chain(h, valid, FilterChainSpec.parse("min_inpaint; gaussian(1.0)"))
    assert ok.all() and out[2, 2] == 0.0


def test_chain_parsing_and_validation():
    chain = FilterChainSpec.parse("min_inpaint; median(2); gaussian(1.5, 4); box(1)")
    assert [s.kind for s in chain.steps] == ["min_inpaint", "median", "gaussian", "box"]
    assert chain.steps[2] == FilterStep("gaussian", 4, 1.5)
    with pytest.raises(ValueError):
        FilterChainSpec.parse("sharpen(1)")
    with pytest.raises(ValueError):
        FilterStep("box", 0)
    with pytest.raises(ValueError):
        FilterStep("gaussian", 1, 0.0)


# ---------------------------------------------------------------- fitting

def test_fit_horizontal_plane():
    n, d, rms = fit_plane([[0, 0, 0.1], [1, 0, 0.1], [0, 1, 0.1]])
    np.testing.assert_allclose(n, [0, 0, 1], atol=1e-12)
    assert d == pytest.approx(0.1) and rms == pytest.approx(0.0, abs=1e-12)


def test_fit_inclined_plane():
    pts = [[x, y, 0.5 * x] for x in range(3) for y in range(3)]
    n, d, rms = fit_plane(pts)
    np.testing.assert_allclose(n, np.array([-0.5, 0, 1]) / math.sqrt(1.25), atol=1e-12)
    assert d == pytest.approx(0.0, abs=1e-12) and rms == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("pts", [[[0, 0, 0], [1, 1, 0], [2, 2, 1]], [[0, 0, 0], [1, 0, 0]]])
def test_degenerate_fit_rejected(pts):
    with pytest.raises(DegeneratePlane):
        fit_plane(pts)


# ------------------------------------------------------------ segmentation

def map_from(h, res=0.1):
    m = ElevationMap.empty(GridSpec(res, h.shape[1], h.shape[0]))
    ok = np.isfinite(h)
    m.layers["valid"][...] = ok
    m.layers["elevation"][...] = h
    m.layers["variance"][...] = np.where(ok, 0.01, np.nan)
    compute_normals(m)
    return m


def test_flat_map_single_rectangle():
    m = map_from(np.zeros((10, 14)))
    regions = segment_planes(m, PlaneSegParams())
    assert len(regions) == 1
    reg = regions[0]
    assert reg.cell_count == 140 and not reg.holes
    xs, ys = reg.outer[:, 0], reg.outer[:, 1]
    assert len(reg.outer) == 4
    assert (xs.min(), xs.max(), ys.min(), ys.max()) == pytest.approx((-0.7, 0.7, -0.5, 0.5))
    assert polygon_area(reg.outer) == pytest.approx(1.4)  # counterclockwise


def test_flat_map_with_square_hole():
    h = np.zeros((12, 12))
    h[4:7, 5:8] = np.nan
    m = map_from(h)
    regions = segment_planes(m, PlaneSegParams(), exact_polygons=True)
    assert len(regions) == 1
    (hole,) = regions[0].holes
    assert polygon_area(hole) == pytest.approx(-0.09)  # clockwise, 3x3 cells
    X, Y = cell_centers(m.spec)
    assert hole[:, 0].min() == pytest.approx(X[0, 5] - 0.05) and hole[:, 0].max() == pytest.approx(X[0, 7] + 0.05)
    assert hole[:, 1].min() == pytest.approx(Y[4, 0] - 0.05) and hole[:, 1].max() == pytest.approx(Y[6, 0] + 0.05)
    assert regions[0].area == pytest.approx(1.44 - 0.09)


@pytest.mark.parametrize("noise", [0.0, 0.005])
def test_staircase_four_regions(noise):
    sc = staircase_map(noise_std=noise, seed=1)
    regions = segment_planes(sc.emap, PlaneSegParams())
    assert len(regions) == 4
    heights = sorted(reg.offset / reg.normal[2] for reg in regions)
    tol = 1e-6 if noise == 0 else 0.01
    np.testing.assert_allclose(heights, STAIR_HEIGHTS, atol=tol)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_regions_are_disjoint_valid_and_audited(seed):
    rng = np.random.default_rng(seed)
    h = np.round(ndimage.uniform_filter(rng.normal(size=(24, 24)), 5) * 4) * 0.05
    h[rng.random(h.shape) < 0.05] = np.nan
    m = map_from(h)
    params = PlaneSegParams(min_region_cells=4)
    regions = segment_planes(m, params)
    owner = np.zeros(h.shape, int)
    cos_max = math.cos(params.normal_angle_max)
    X, Y = cell_centers(m.spec)
    for reg in regions:
        r, c = reg.cells.T
        assert np.all(owner[r, c] == 0)
        owner[r, c] += 1
        assert m.valid[r, c].all()
        assert reg.normal[2] > 0 and np.linalg.norm(reg.normal) == pytest.approx(1.0)
        assert np.all(m.normal[r, c] @ reg.normal >= cos_max - 1e-12)
        P = np.column_stack([X[r, c], Y[r, c], h[r, c]])
        assert np.all(np.abs(P @ reg.normal - reg.offset) <= params.dist_max + 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_exact_polygon_area_equals_cell_area(seed):
    rng = np.random.default_rng(seed)
    blob = ndimage.binary_opening(rng.random((16, 16)) < 0.6)
    lab, k = ndimage.label(blob, FOUR)
    if k == 0:
        return
    mask = lab == 1 + int(np.argmax(np.bincount(lab.ravel())[1:]))
    spec = GridSpec(0.05, 16, 16)
    outer, holes = mask_polygons(mask, spec, exact=True)
    area = polygon_area(outer) + sum(polygon_area(h) for h in holes)
    assert area == pytest.approx(mask.sum() * spec.resolution ** 2)


def test_region_text_roundtrip():
    h = np.zeros((12, 12))
    h[4:7, 5:8] = np.nan
    regions = segment_planes(map_from(h), PlaneSegParams())
    back = regions_from_text(regions_to_text(regions))
    assert len(back) == len(regions)
    for a, b in zip(regions, back):
        np.testing.assert_array_equal(a.normal, b.normal)
        assert a.offset == b.offset and a.cell_count == b.cell_count
        np.testing.assert_array_equal(a.outer, b.outer)
        for ha, hb in zip(a.holes, b.holes):
            np.testing.assert_array_equal(ha, hb)


def test_malformed_region_text():
    with pytest.raises(ValueError):
        regions_from_text("regions: 1\nregion 0 cells x\n")
