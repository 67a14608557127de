import numpy as np
import pytest

from volumetry_core.constants import Side
from volumetry_core.exceptions import EmptyMaskError, GeometryError
from volumetry_core.phantom import voxelize
from volumetry_core.volgrid import (
    GridGeometry,
    StationPair,
    VolumeGrid,
    center_of_mass,
    coverage,
    resample_trilinear,
    voxel_to_world,
    world_to_voxel,
)


def test_voxel_to_world_station_spacing():
    geometry = GridGeometry((4, 4, 4), (2.232, 2.232, 4.5))
    assert voxel_to_world(geometry, (1, 0, 2)) == pytest.approx((2.232, 0.0, 9.0))


def test_voxel_to_world_origin_and_unit_spacing():
    geometry = GridGeometry((5, 5, 5), (1.0, 1.0, 1.0), (10.0, -5.0, 100.0))
    assert voxel_to_world(geometry, (0, 0, 0)) == (10.0, -5.0, 100.0)
    assert voxel_to_world(geometry, (2, 3, 4)) == (12.0, -2.0, 104.0)


def test_voxel_to_world_out_of_bounds():
    geometry = GridGeometry((3, 3, 3), (1.0, 1.0, 1.0))
    with pytest.raises(GeometryError) as exc_info:
        voxel_to_world(geometry, (0, 3, 0))
    assert exc_info.value.axis == 1


def test_world_to_voxel_nearest():
    geometry = GridGeometry((10, 10, 10), (2.0, 2.0, 3.0), (-4.0, 0.0, 0.0))
    assert world_to_voxel(geometry, (-3.1, 4.9, 13.0)) == (0, 2, 4)
    with pytest.raises(GeometryError):
        world_to_voxel(geometry, (100.0, 0.0, 0.0))


def test_geometry_rejects_degenerate_grids():
    with pytest.raises(GeometryError):
        GridGeometry((0, 4, 4), (1.0, 1.0, 1.0))
    with pytest.raises(GeometryError):
        GridGeometry((4, 4, 4), (1.0, 0.0, 1.0))


def test_crop_z_moves_origin():
    geometry = GridGeometry((4, 4, 44), (2.232, 2.232, 4.5), (0.0, 0.0, 10.0))
    cropped = geometry.crop_z(3, 41)
    assert cropped.dims == (4, 4, 38)
    assert cropped.origin[2] == pytest.approx(10.0 + 3 * 4.5)


def test_volume_grid_is_read_only():
    grid = VolumeGrid(np.zeros((2, 2, 2), dtype=np.float32), (1.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        grid.values[0, 0, 0] = 1.0


def test_volume_grid_label_values_must_be_binary():
    with pytest.raises(GeometryError):
        VolumeGrid(np.full((2, 2, 2), 2, dtype=np.uint8), (1.0, 1.0, 1.0))
    assert VolumeGrid(np.ones((2, 2, 2), dtype=bool), (1.0, 1.0, 1.0)).is_labels


def test_station_pair_lookup():
    grid = VolumeGrid(np.zeros((2, 2, 2), dtype=np.float32), (1.0, 1.0, 1.0))
    pair = StationPair("S1", grid, grid)
    assert pair.station(2) is grid
    with pytest.raises(ValueError):
        pair.station(4)


def test_resample_identity_is_bit_identical():
    rng = np.random.default_rng(0)
    source = VolumeGrid(rng.random((6, 5, 4)).astype(np.float32), (2.232, 2.232, 4.5), (1.0, 2.0, 3.0))
    result = resample_trilinear(source, source.geometry)
    assert np.array_equal(result.values, source.values)


def test_resample_constant_is_zero_outside_source():
    source = VolumeGrid(np.full((6, 6, 6), 3.0, dtype=np.float32), (1.0, 1.0, 1.0))
    # Half a voxel along x: the last target column lies beyond the source extent
    target = GridGeometry((6, 6, 6), (1.0, 1.0, 1.0), (0.5, 0.0, 0.0))
    result = resample_trilinear(source, target)
    assert np.allclose(result.values[:5], 3.0)
    assert np.all(result.values[5] == 0.0)


def test_resample_whole_voxel_shift():
    values = np.arange(4 * 4 * 6, dtype=np.float32).reshape(4, 4, 6)
    source = VolumeGrid(values, (1.0, 1.0, 2.0))
    target = GridGeometry((4, 4, 6), (1.0, 1.0, 2.0), (0.0, 0.0, 2.0))
    result = resample_trilinear(source, target)
    assert np.array_equal(result.values[:, :, :-1], values[:, :, 1:])
    assert np.all(result.values[:, :, -1] == 0.0)


def test_resample_ramp_at_half_spacing():
    ramp = np.broadcast_to(np.arange(5, dtype=np.float32)[None, None, :], (3, 3, 5)).copy()
    source = VolumeGrid(ramp, (1.0, 1.0, 4.0))
    target = GridGeometry((3, 3, 9), (1.0, 1.0, 2.0))
    result = resample_trilinear(source, target)

    # Brute-force oracle: linear interpolation between neighbouring source slices
    z = np.arange(9) * 2.0 / 4.0
    expected = np.interp(z, np.arange(5), np.arange(5, dtype=np.float64))
    assert np.allclose(result.values[1, 1, :], expected, atol=1e-6)
    assert result.values[1, 1, 1] == pytest.approx(0.5)


def test_resample_labels_gives_intensities():
    labels = VolumeGrid(np.ones((3, 3, 3), dtype=np.uint8), (1.0, 1.0, 1.0))
    result = resample_trilinear(labels, labels.geometry)
    assert result.values.dtype == np.float32
    assert not result.is_labels


def test_coverage_marks_overlap_only():
    source = GridGeometry((4, 4, 4), (1.0, 1.0, 1.0))
    target = GridGeometry((4, 4, 8), (1.0, 1.0, 1.0), (0.0, 0.0, -2.0))
    mask = coverage(source, target)
    assert mask[:, :, 2:6].all()
    assert not mask[:, :, :2].any()
    assert not mask[:, :, 6:].any()


def test_center_of_mass_single_voxel(label_grid):
    com = center_of_mass(label_grid((3, 3, 3), [(1, 1, 1)]))
    assert com.position == pytest.approx((1.0, 1.0, 1.0))
    assert com.mass == 1


def test_center_of_mass_symmetric_pair(label_grid):
    com = center_of_mass(label_grid((3, 3, 3), [(0, 0, 0), (2, 0, 0)]))
    assert com.position == pytest.approx((1.0, 0.0, 0.0))
    assert com.mass == 2


def test_center_of_mass_uses_world_coordinates(label_grid):
    grid = label_grid((4, 4, 4), [(1, 2, 3)], spacing=(2.0, 2.0, 4.5), origin=(-3.0, 0.0, 10.0))
    assert center_of_mass(grid).position == pytest.approx((-1.0, 4.0, 23.5))


def test_center_of_mass_of_phantom_ellipsoid(small_phantom):
    kidney = next(k for k in small_phantom.spec.kidneys if k.side is Side.LEFT)
    labels = voxelize((kidney,), small_phantom.spec.union_geometry)
    position = center_of_mass(labels).position
    for axis in range(3):
        assert abs(position[axis] - kidney.center[axis]) <= labels.spacing[axis] / 2


def test_center_of_mass_empty(label_grid):
    with pytest.raises(EmptyMaskError):
        center_of_mass(label_grid((3, 3, 3), []))


def test_as_labels_narrows_binary_floats():
    grid = VolumeGrid(np.array([[[0.0, 1.0]]], dtype=np.float32), (1.0, 1.0, 1.0))
    labels = grid.as_labels()
    assert labels.is_labels
    assert labels.labelled_count() == 1
    assert labels.as_labels() is labels


def test_as_labels_rejects_fractions():
    grid = VolumeGrid(np.array([[[0.0, 0.5]]], dtype=np.float32), (1.0, 1.0, 1.0))
    with pytest.raises(GeometryError):
        grid.as_labels()
