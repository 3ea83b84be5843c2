import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachsyn.geometry import (
    Box,
    BoxRelation,
    InvalidGeometryError,
    box_relation,
    build_partition,
    inscribed_ball_radius,
    scale_region,
    voxelize,
)


def test_partition_car_grid():
    part = build_partition(Box([-10, -10], [10, 10]), [40, 40])
    assert part.num_cells == 1600
    assert np.allclose(part.cell_width, [0.5, 0.5])


def test_partition_single_cell_is_domain():
    part = build_partition(Box([0.0], [1.0]), [1])
    cell = part.cell(0)
    assert np.allclose(cell.lower, 0.0) and np.allclose(cell.upper, 1.0)


def test_partition_pendulum_grid():
    part = build_partition(Box([-math.pi, -2], [math.pi, 2]), [32, 10])
    assert part.num_cells == 320
    assert np.allclose(part.cell_width, [math.pi / 16, 0.4])


def test_partition_rejects_bad_domain():
    with pytest.raises(InvalidGeometryError):
        build_partition(Box([0, 0], [1, 1]), [0, 4])
    with pytest.raises(InvalidGeometryError):
        Box([1.0, 0.0], [0.0, 1.0])


def test_cells_tile_domain_exactly():
    part = build_partition(Box([-1.0, 0.0], [2.0, 0.9]), [7, 3])
    # consecutive cells share boundaries bit for bit; extremes hit the domain
    for i0 in range(7):
        for i1 in range(3):
            cell = part.cell(part.flat_index((i0, i1)))
            if i0 < 6:
                nxt = part.cell(part.flat_index((i0 + 1, i1)))
                assert cell.upper[0] == nxt.lower[0]
    assert part.cell(0).lower[0] == -1.0
    assert part.cell(part.num_cells - 1).upper[1] == 0.9


def test_region_of_corner_and_outside():
    part = build_partition(Box([-10, -10], [10, 10]), [40, 40])
    assert part.region_of([-10.0, -10.0]) == 0
    assert part.region_of([11.0, 0.0]) == part.absorbing_id
    # upper domain faces are closed
    assert part.region_of([10.0, 10.0]) == part.num_cells - 1


def test_region_of_boundary_goes_right():
    # boundary point belongs to the cell on its right (half-open convention);
    # floor((-9.5 + 10) / 0.5) = 1 in the first dimension
    part = build_partition(Box([-10, -10], [10, 10]), [40, 40])
    assert part.multi_index(part.region_of([-9.5, -10.0])) == (1, 0)


def test_region_of_batch_matches_scalar(rng):
    part = build_partition(Box([-1.0, 2.0], [4.0, 3.0]), [13, 5])
    pts = rng.uniform([-2, 1.5], [5, 3.5], size=(500, 2))
    ids = part.region_of_batch(pts)
    assert all(ids[k] == part.region_of(pts[k]) for k in range(len(pts)))


def test_region_of_partitions_domain(rng):
    part = build_partition(Box([-math.pi, -2], [math.pi, 2]), [32, 10])
    pts = part.domain.sample(rng, 100_000)
    ids = part.region_of_batch(pts)
    assert np.all(ids < part.num_cells)
    # every sampled point is contained in the cell that claims it
    for i in np.unique(ids):
        cell = part.cell(int(i))
        assert np.all(cell.contains_points(pts[ids == i]))


def test_scale_region_examples():
    unit = Box([0, 0], [1, 1])
    same = scale_region(unit, 1.0)
    assert np.allclose(same.lower, 0) and np.allclose(same.upper, 1)
    half = scale_region(unit, 0.5)
    assert np.allclose(half.lower, 0.25) and np.allclose(half.upper, 0.75)
    double = scale_region(unit, 2.0)
    assert np.allclose(double.lower, -0.5) and np.allclose(double.upper, 1.5)
    with pytest.raises(InvalidGeometryError):
        scale_region(unit, -0.1)


@given(lam1=st.floats(0, 3), lam2=st.floats(0, 3))
def test_scaling_monotone(lam1, lam2):
    region = Box([-1.0, 0.5], [2.0, 0.9])
    lam1, lam2 = min(lam1, lam2), max(lam1, lam2)
    small = scale_region(region, lam1)
    big = scale_region(region, lam2)
    assert np.all(small.lower >= big.lower - 1e-12)
    assert np.all(small.upper <= big.upper + 1e-12)


def test_inscribed_ball_examples():
    region = Box([-1, -1], [1, 1])
    assert inscribed_ball_radius(region, 1.0, [0.2, 0.0]) == pytest.approx(0.8)
    assert inscribed_ball_radius(region, 0.5, [0.2, 0.0]) == pytest.approx(0.3)
    rect = Box([0.0, 0.0], [1.0, 4.0])
    assert inscribed_ball_radius(rect, 1.0, rect.center) == pytest.approx(0.5)
    # negative radius signals "outside the scaled region", not clamped
    assert inscribed_ball_radius(region, 0.5, [0.9, 0.0]) < 0


@given(lam=st.floats(1.0, 2.0), x=st.floats(-0.9, 0.9), y=st.floats(-3.5, 3.5))
def test_radius_concave_in_lambda(lam, x, y):
    # r is a min of affine functions of lambda, so it dominates the chord
    # through its values at 1 and 2 on [1, 2]
    region = Box([-1, -4], [1, 4])
    r1 = inscribed_ball_radius(region, 1.0, [x, y])
    r2 = inscribed_ball_radius(region, 2.0, [x, y])
    r = inscribed_ball_radius(region, lam, [x, y])
    assert r >= r1 + (lam - 1.0) * (r2 - r1) - 1e-12


@settings(max_examples=200)
@given(st.data())
def test_ball_soundness(data):
    region = Box([-1.0, -0.3], [0.5, 0.8])
    lam = data.draw(st.floats(0.1, 2.5))
    xp = np.array([data.draw(st.floats(-1.5, 1.0)), data.draw(st.floats(-1, 1))])
    r = inscribed_ball_radius(region, lam, xp)
    if r < 0:
        return
    scaled = scale_region(region, lam)
    offs = data.draw(st.lists(st.floats(-1, 1), min_size=2, max_size=2))
    y = xp + r * np.asarray(offs)
    assert scaled.contains(y)


def test_voxelize_examples():
    part = build_partition(Box([0, 0], [2.0, 1.6]), [4, 4])  # cells 0.5 x 0.4
    vox = voxelize(part, 0, [7, 7])
    assert vox.num_voxels == 49
    assert np.allclose(vox.half_widths, [0.5 / 14, 0.4 / 14])
    single = voxelize(part, 0, [1, 1])
    assert np.allclose(single.centers[0], part.cell(0).center)
    assert np.allclose(single.half_widths, part.cell(0).half_widths)
    assert voxelize(part, 0, [15, 15]).num_voxels == 225
    with pytest.raises(InvalidGeometryError):
        voxelize(part, part.absorbing_id, [2, 2])


def test_voxels_tile_cell(rng):
    part = build_partition(Box([-1, -1], [1, 1]), [2, 2])
    vox = voxelize(part, 3, [3, 5])
    cell = part.cell(3)
    pts = cell.sample(rng, 2000)
    ids = vox.voxel_of_batch(pts, cell)
    assert ids.min() >= 0 and ids.max() < vox.num_voxels
    for k in range(200):
        i = ids[k]
        assert np.all(np.abs(pts[k] - vox.centers[i]) <= vox.half_widths + 1e-12)


def test_box_relation_examples():
    cell = Box([0, 0], [1, 1])
    assert box_relation(cell, Box([0.2, 0.2], [0.8, 0.8])) is BoxRelation.CONTAINED
    assert box_relation(cell, Box([0.5, 0.0], [1.5, 1.0])) is BoxRelation.INTERSECTING
    # a shared face has measure zero and counts as disjoint
    assert box_relation(cell, Box([1.0, 0.0], [2.0, 1.0])) is BoxRelation.DISJOINT
    assert box_relation(cell, Box([3.0, 3.0], [4.0, 4.0])) is BoxRelation.DISJOINT
    # the cell itself is contained (closed-box convention)
    assert box_relation(cell, cell) is BoxRelation.CONTAINED
