import numpy as np
import pytest

from volumetry_core.exceptions import GeometryError, StationOverlapError
from volumetry_core.fusion import blend_weights, common_grid, fuse, order_stations, overlap_pair, overlap_z_range
from volumetry_core.phantom import Artifacts, generate
from volumetry_core.preprocess import trim_station
from volumetry_core.volgrid import GridGeometry, VolumeGrid

SCANNER_SPACING = (2.232, 2.232, 4.5)


def _pair(values_lower, values_upper, upper_start: int, spacing=(1.0, 1.0, 1.0)):
    """Two stations on a shared lattice; the upper one starts ``upper_start`` slices above the lower."""
    lower = VolumeGrid(values_lower, spacing, (0.0, 0.0, 0.0))
    upper = VolumeGrid(values_upper, spacing, (0.0, 0.0, upper_start * spacing[2]))
    return lower, upper


def test_common_grid_identical_geometries():
    geometry = GridGeometry((8, 6, 10), SCANNER_SPACING, (-5.0, 1.0, 2.0))
    assert common_grid(geometry, geometry) == geometry


def test_common_grid_station_geometry():
    lower = GridGeometry((224, 174, 38), SCANNER_SPACING, (0.0, 0.0, 0.0))
    upper = GridGeometry((224, 174, 38), SCANNER_SPACING, (0.0, 0.0, 26 * 4.5))
    union = common_grid(lower, upper)
    assert union.dims == (224, 174, 64)
    assert union.origin == (0.0, 0.0, 0.0)
    assert overlap_z_range(lower, upper) == pytest.approx((26 * 4.5, 37 * 4.5))


def test_common_grid_half_voxel_in_plane_offset():
    lower = GridGeometry((10, 10, 10), (1.0, 1.0, 1.0))
    upper = GridGeometry((10, 10, 10), (1.0, 1.0, 1.0), (0.5, 0.0, 5.0))
    assert common_grid(lower, upper).dims == (11, 10, 15)


def test_common_grid_uses_finer_spacing():
    lower = GridGeometry((4, 4, 4), (2.0, 2.0, 3.0))
    upper = GridGeometry((4, 4, 4), (1.0, 2.0, 3.0), (0.0, 0.0, 6.0))
    assert common_grid(lower, upper).spacing == (1.0, 2.0, 3.0)


def test_common_grid_rejects_gap():
    lower = GridGeometry((4, 4, 38), SCANNER_SPACING)
    upper = GridGeometry((4, 4, 38), SCANNER_SPACING, (0.0, 0.0, 40 * 4.5))
    with pytest.raises(StationOverlapError):
        common_grid(lower, upper)


def test_abutting_stations_have_no_overlap():
    lower = GridGeometry((4, 4, 5), (1.0, 1.0, 1.0))
    upper = GridGeometry((4, 4, 5), (1.0, 1.0, 1.0), (0.0, 0.0, 5.0))
    assert common_grid(lower, upper).dims == (4, 4, 10)
    assert overlap_z_range(lower, upper) is None
    assert not blend_weights(common_grid(lower, upper), None).any()


def test_order_stations_by_z_extent():
    lower = GridGeometry((4, 4, 5), (1.0, 1.0, 1.0))
    upper = GridGeometry((4, 4, 5), (1.0, 1.0, 1.0), (0.0, 0.0, 2.0))
    assert order_stations(lower, upper) == (False, upper, lower)
    assert order_stations(upper, lower) == (True, upper, lower)


def test_blend_weights_ramp():
    geometry = GridGeometry((1, 1, 7), (1.0, 1.0, 1.0))
    weights = blend_weights(geometry, (2.0, 4.0))
    assert weights[2] == 1.0
    assert weights[3] == 0.5
    assert weights[4] == 0.0


def test_fuse_identical_overlap_is_bit_exact():
    rng = np.random.default_rng(1)
    union = rng.random((6, 5, 12)).astype(np.float32)
    lower, upper = _pair(union[:, :, :8], union[:, :, 4:], upper_start=4)
    labels_lower, labels_upper = _pair(
        (union[:, :, :8] > 0.5).astype(np.uint8), (union[:, :, 4:] > 0.5).astype(np.uint8), upper_start=4
    )

    fused = fuse(upper, lower, labels_upper, labels_lower)
    assert fused.image.dims == (6, 5, 12)
    assert np.array_equal(fused.image.values, union)
    assert np.array_equal(fused.labels.values, (union > 0.5).astype(np.uint8))
    assert fused.overlap_z_range == (4.0, 7.0)


def test_fuse_midpoint_is_halfway():
    lower, upper = _pair(np.zeros((2, 2, 5), np.float32), np.ones((2, 2, 5), np.float32), upper_start=2)
    labels_lower, labels_upper = _pair(np.zeros((2, 2, 5), np.uint8), np.ones((2, 2, 5), np.uint8), upper_start=2)
    fused = fuse(lower, upper, labels_lower, labels_upper)

    column = fused.image.values[0, 0, :]
    assert column.tolist() == pytest.approx([0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0])
    # The tie at the overlap midpoint counts as labelled
    assert fused.labels.values[0, 0, :].tolist() == [0, 0, 0, 1, 1, 1, 1]


def test_fuse_label_in_both_stations_survives():
    lower, upper = _pair(np.zeros((2, 2, 6), np.float32), np.zeros((2, 2, 6), np.float32), upper_start=2)
    labels = np.zeros((2, 2, 6), np.uint8)
    labels[1, 1, :] = 1
    labels_lower, labels_upper = _pair(labels, labels, upper_start=2)
    fused = fuse(lower, upper, labels_lower, labels_upper)
    assert fused.labels.values[1, 1, :].all()
    assert fused.labels.labelled_count() == 8


def test_fuse_does_not_depend_on_argument_order():
    rng = np.random.default_rng(2)
    lower, upper = _pair(
        rng.random((4, 4, 8)).astype(np.float32), rng.random((4, 4, 8)).astype(np.float32), upper_start=5
    )
    labels_lower, labels_upper = _pair(
        (lower.values > 0.5).astype(np.uint8), (upper.values > 0.5).astype(np.uint8), upper_start=5
    )
    first = fuse(lower, upper, labels_lower, labels_upper)
    second = fuse(upper, lower, labels_upper, labels_lower)
    assert np.array_equal(first.image.values, second.image.values)
    assert np.array_equal(first.labels.values, second.labels.values)


def test_fuse_requires_matching_label_geometry():
    lower, upper = _pair(np.zeros((2, 2, 5), np.float32), np.zeros((2, 2, 5), np.float32), upper_start=2)
    wrong = VolumeGrid(np.zeros((2, 2, 4), np.uint8), (1.0, 1.0, 1.0))
    with pytest.raises(GeometryError):
        fuse(lower, upper, wrong, wrong)


def test_overlap_pair_slab():
    lower, upper = _pair(np.zeros((2, 3, 5), np.float32), np.ones((2, 3, 5), np.float32), upper_start=3)
    samples = overlap_pair(lower, upper)
    assert samples.geometry.dims == (2, 3, 2)
    assert samples.voxel_count == 12
    assert samples.upper.min() == 1.0
    assert samples.lower.max() == 0.0


def test_overlap_pair_without_overlap():
    lower, upper = _pair(np.zeros((2, 2, 5), np.float32), np.zeros((2, 2, 5), np.float32), upper_start=5)
    with pytest.raises(StationOverlapError):
        overlap_pair(lower, upper)


def test_fuse_phantom_reproduces_ground_truth(small_phantom):
    spec = small_phantom.spec
    stations = [trim_station(small_phantom.stations.station(i), spec.n_trim) for i in (2, 3)]
    masks = [trim_station(small_phantom.masks.station(i), spec.n_trim) for i in (2, 3)]
    fused = fuse(stations[0], stations[1], masks[0], masks[1])

    truth = small_phantom.fused_ground_truth()
    assert fused.labels.dims == truth.dims == spec.fused_geometry.dims
    assert np.allclose(fused.labels.origin, truth.origin)
    assert np.array_equal(fused.labels.values, truth.values)


@pytest.mark.parametrize("k", [0.01, 3.5, 1000.0])
def test_fusion_commutes_with_intensity_scaling(spec_with, k):
    spec = spec_with(noise_sigma=0.05, artifacts=Artifacts(motion_shift_voxels=(1, 0, 2)))
    phantom = generate(spec, seed=3)
    upper, lower = (trim_station(phantom.stations.station(i)) for i in (2, 3))
    upper_lab, lower_lab = (trim_station(phantom.masks.station(i)) for i in (2, 3))

    fused = fuse(upper, lower, upper_lab, lower_lab)
    scaled = fuse(upper.with_values(k * upper.values), lower.with_values(k * lower.values), upper_lab, lower_lab)

    assert scaled.image.geometry == fused.image.geometry
    assert np.allclose(scaled.image.values, k * fused.image.values, rtol=1e-5, atol=1e-6 * k)
    assert np.array_equal(scaled.labels.values, fused.labels.values)
