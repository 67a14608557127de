import json

import numpy as np
import pytest

from volumetry_core.exceptions import VolumeFormatError
from volumetry_core.volgrid import VolumeGrid
from volumetry_core.volume_io import load_volume, save_volume

SPACING = (2.232, 2.232, 4.5)
ORIGIN = (-70.0, -50.0, 12.25)


def _image() -> VolumeGrid:
    values = np.random.default_rng(0).random((6, 5, 4)).astype(np.float32)
    return VolumeGrid(values, SPACING, ORIGIN)


def _labels() -> VolumeGrid:
    values = np.zeros((6, 5, 4), dtype=np.uint8)
    values[1:3, 2:4, 1] = 1
    values[5, 0, 3] = 1
    return VolumeGrid(values, SPACING, ORIGIN)


@pytest.mark.parametrize("suffix", [".nii", ".raw"])
def test_image_round_trip(tmp_path, suffix):
    grid = _image()
    path = save_volume(grid, tmp_path / f"image{suffix}")
    loaded = load_volume(path)
    assert loaded.dims == grid.dims
    assert np.allclose(loaded.values, grid.values)
    assert loaded.spacing == pytest.approx(SPACING, abs=1e-5)
    assert loaded.origin == pytest.approx(ORIGIN, abs=1e-4)
    assert loaded.values.dtype == np.float32


@pytest.mark.parametrize("suffix", [".nii", ".raw"])
def test_labels_stay_binary_uint8(tmp_path, suffix):
    path = save_volume(_labels(), tmp_path / f"mask{suffix}")
    loaded = load_volume(path, kind="labels")
    assert loaded.values.dtype == np.uint8
    assert loaded.labelled_count() == 5
    # The (x, y, z) axis order survives the file layout
    assert loaded.values[5, 0, 3] == 1


def test_raw_sidecar_contents(tmp_path):
    save_volume(_labels(), tmp_path / "mask.raw")
    sidecar = json.loads((tmp_path / "mask.json").read_text())
    assert sidecar["dims"] == [6, 5, 4]
    assert sidecar["dtype"] == "uint8"
    assert sidecar["order"] == "x-fastest"
    assert (tmp_path / "mask.raw").stat().st_size == 6 * 5 * 4


def test_int16_images_load_as_float(tmp_path):
    grid = VolumeGrid(np.arange(120, dtype=np.float32).reshape(6, 5, 4), SPACING, ORIGIN)
    loaded = load_volume(save_volume(grid, tmp_path / "image.nii", dtype=np.int16))
    assert loaded.values.dtype == np.float32
    assert np.array_equal(loaded.values, grid.values)


def test_compressed_nifti_rejected(tmp_path):
    with pytest.raises(VolumeFormatError, match="compressed"):
        load_volume(tmp_path / "image.nii.gz")


def test_missing_file(tmp_path):
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "absent.nii")
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "absent.raw")


def test_unknown_suffix(tmp_path):
    with pytest.raises(VolumeFormatError):
        save_volume(_image(), tmp_path / "image.mha")


def test_truncated_nifti(tmp_path):
    path = save_volume(_image(), tmp_path / "image.nii")
    data = path.read_bytes()
    path.write_bytes(data[: 352 + 40])
    with pytest.raises(VolumeFormatError):
        load_volume(path)


def test_truncated_raw(tmp_path):
    path = save_volume(_image(), tmp_path / "image.raw")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(VolumeFormatError, match="voxels"):
        load_volume(path)


def test_raw_without_sidecar(tmp_path):
    path = save_volume(_image(), tmp_path / "image.raw")
    path.with_suffix(".json").unlink()
    with pytest.raises(VolumeFormatError):
        load_volume(path)


def test_malformed_sidecar(tmp_path):
    path = save_volume(_image(), tmp_path / "image.raw")
    path.with_suffix(".json").write_text('{"dims": [6, 5]}')
    with pytest.raises(VolumeFormatError, match="sidecar"):
        load_volume(path)


def test_non_binary_labels_rejected(tmp_path):
    grid = VolumeGrid(np.full((2, 2, 2), 3.0, dtype=np.float32), (1.0, 1.0, 1.0))
    path = save_volume(grid, tmp_path / "mask.nii")
    with pytest.raises(VolumeFormatError, match="0 and 1"):
        load_volume(path, kind="labels")
