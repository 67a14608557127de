import numpy as np
import pytest

from volumetry_core.constants import SegmenterKind
from volumetry_core.exceptions import MaskNotFound, MaskShapeMismatch
from volumetry_core.phantom import PhantomSpec, generate
from volumetry_core.preprocess import trim_station
from volumetry_core.segmenter import (
    ExternalMaskSegmenter,
    SegmenterSpec,
    ThresholdSegmenter,
    build_segmenter,
    segment_station,
)
from volumetry_core.volgrid import VolumeGrid
from volumetry_core.volume_io import save_volume


def _cube_station():
    values = np.full((12, 10, 5), 0.1, dtype=np.float32)
    values[3:7, 2:6, :] = 0.9
    return VolumeGrid(values, (2.232, 2.232, 4.5), (-10.0, 0.0, 5.0))


def test_threshold_labels_bright_voxels():
    station = _cube_station()
    labels = ThresholdSegmenter(threshold=0.5, clip_fraction=0.0, pad_shape=(16, 16)).segment(station)
    assert labels.is_labels
    assert labels.geometry == station.geometry
    assert np.array_equal(labels.values, (station.values > 0.5).astype(np.uint8))


def test_threshold_on_phantom_matches_ground_truth(small_phantom):
    station = trim_station(small_phantom.stations.station(3))
    segmenter = ThresholdSegmenter(threshold=0.5, clip_fraction=0.0, pad_shape=(64, 48))
    labels = segmenter.segment(station)
    truth = trim_station(small_phantom.masks.station(3))
    assert np.array_equal(labels.values, truth.values)


def test_threshold_default_settings_on_station_geometry():
    phantom = generate(PhantomSpec(), seed=0, subject_id="P001")
    station = trim_station(phantom.stations.station(3))
    labels = ThresholdSegmenter(threshold=0.5).segment(station)
    truth = trim_station(phantom.masks.station(3))
    assert labels.labelled_count() == truth.labelled_count()
    assert np.array_equal(labels.values, truth.values)


def test_threshold_all_background():
    station = VolumeGrid(np.full((8, 8, 4), 0.1, dtype=np.float32), (1.0, 1.0, 1.0))
    labels = ThresholdSegmenter(pad_shape=(8, 8)).segment(station)
    assert labels.labelled_count() == 0


def test_threshold_rejects_bad_fraction():
    with pytest.raises(ValueError):
        ThresholdSegmenter(threshold=1.0)


def test_external_mask_passthrough(small_phantom, tmp_path):
    station = trim_station(small_phantom.stations.station(2))
    mask = trim_station(small_phantom.masks.station(2))
    save_volume(mask, tmp_path / "S001_station2_mask.nii")

    labels = ExternalMaskSegmenter(tmp_path).segment(station, "S001", 2)
    assert np.array_equal(labels.values, mask.values)
    assert labels.geometry == station.geometry


def test_external_mask_in_raw_station_geometry_is_trimmed(small_phantom, tmp_path):
    save_volume(small_phantom.masks.station(3), tmp_path / "S001_station3_mask.nii")
    station = trim_station(small_phantom.stations.station(3))

    labels = ExternalMaskSegmenter(tmp_path, n_trim=3).segment(station, "S001", 3)
    assert labels.dims == station.dims
    assert np.array_equal(labels.values, trim_station(small_phantom.masks.station(3)).values)


def test_external_mask_explicit_path(tmp_path):
    grid = VolumeGrid(np.ones((3, 3, 3), dtype=np.uint8), (1.0, 1.0, 1.0))
    path = save_volume(grid, tmp_path / "anything.nii")
    segmenter = ExternalMaskSegmenter()
    segmenter.register("S9", 3, path)
    assert segmenter.mask_path("S9", 3) == path
    assert segmenter.segment(grid, "S9", 3).labelled_count() == 27


def test_external_mask_missing(tmp_path):
    station = VolumeGrid(np.zeros((3, 3, 3), dtype=np.float32), (1.0, 1.0, 1.0))
    with pytest.raises(MaskNotFound) as exc_info:
        ExternalMaskSegmenter(tmp_path).segment(station, "S404", 2)
    assert exc_info.value.station == 2


def test_external_mask_shape_mismatch(tmp_path):
    save_volume(VolumeGrid(np.zeros((4, 3, 3), dtype=np.uint8), (1.0, 1.0, 1.0)), tmp_path / "S1_station2_mask.nii")
    station = VolumeGrid(np.zeros((3, 3, 3), dtype=np.float32), (1.0, 1.0, 1.0))
    with pytest.raises(MaskShapeMismatch):
        ExternalMaskSegmenter(tmp_path).segment(station, "S1", 2)


def test_build_segmenter_by_kind(tmp_path):
    threshold = build_segmenter(SegmenterSpec(SegmenterKind.THRESHOLD_BASELINE, {"threshold": 0.3}))
    assert isinstance(threshold, ThresholdSegmenter)
    assert threshold.threshold == 0.3

    external = build_segmenter(
        SegmenterSpec(SegmenterKind.EXTERNAL_MASKS, {"mask_dir": str(tmp_path), "mask_paths": {("S1", 2): "m.nii"}})
    )
    assert isinstance(external, ExternalMaskSegmenter)
    assert external.mask_path("S1", 2).name == "m.nii"
    assert external.mask_path("S1", 3) == tmp_path / "S1_station3_mask.nii"


def test_segment_station_keeps_geometry():
    station = _cube_station()
    spec = SegmenterSpec(
        SegmenterKind.THRESHOLD_BASELINE, {"threshold": 0.5, "clip_fraction": 0.0, "pad_shape": (12, 10)}
    )
    labels = segment_station(station, spec)
    assert labels.geometry == station.geometry
    assert labels.labelled_count() == 4 * 4 * 5
