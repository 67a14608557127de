"""
Volume file formats.

Two formats are supported:

* a single-file NIfTI-1 subset (``.nii``): 348-byte header, data at offset 352, magic ``n+1``,
  little-endian, datatypes uint8 / int16 / float32, uncompressed, with a diagonal positive affine
  (the pipeline's axis convention);
* a raw fallback (``.raw``) with a JSON sidecar (``.json``) holding dims, spacing, origin and dtype,
  data stored x-fastest.
"""

import json
import logging
from pathlib import Path
from typing import Literal

import nibabel as nib
import numpy as np

from .exceptions import GeometryError, VolumeFormatError
from .volgrid import VolumeGrid

logger = logging.getLogger(__name__)

VolumeKind = Literal["image", "labels"]

NIFTI_HEADER_SIZE = 348
NIFTI_DATA_OFFSET = 352
NIFTI_MAGIC = b"n+1"
# NIfTI datatype codes accepted on load
SUPPORTED_DATATYPES = {2: np.uint8, 4: np.int16, 16: np.float32}

RAW_SUFFIX = ".raw"
SIDECAR_SUFFIX = ".json"


def _check_kind(grid: VolumeGrid, kind: VolumeKind, path: Path) -> VolumeGrid:
    if kind == "image":
        return grid if not grid.is_labels else grid.with_values(grid.values.astype(np.float32))
    try:
        return grid.as_labels()
    except GeometryError as e:
        raise VolumeFormatError(str(path), "label volume contains values other than 0 and 1") from e


def save_volume(grid: VolumeGrid, path: str | Path, dtype: type | None = None) -> Path:
    """
    Write ``grid`` as ``.nii`` or ``.raw`` (+ sidecar) depending on the suffix.

    Label grids are written as uint8, intensity grids as float32 unless ``dtype`` says otherwise.
    """
    path = Path(path)
    dtype = np.dtype(dtype or (np.uint8 if grid.is_labels else np.float32))
    if dtype.type not in SUPPORTED_DATATYPES.values():
        raise VolumeFormatError(str(path), f"unsupported datatype {dtype}")
    path.parent.mkdir(parents=True, exist_ok=True)

    if path.suffix == RAW_SUFFIX:
        _save_raw(grid, path, dtype)
    elif path.suffix == ".nii":
        _save_nifti(grid, path, dtype)
    else:
        raise VolumeFormatError(str(path), "expected a .nii or .raw file name")
    return path


def load_volume(path: str | Path, kind: VolumeKind = "image") -> VolumeGrid:
    """
    Read a volume written in one of the supported formats.

    Raises:
        VolumeFormatError: If the file is missing, truncated, compressed or outside the supported subset.
    """
    path = Path(path)
    if path.name.endswith(".nii.gz"):
        raise VolumeFormatError(str(path), "compressed NIfTI is not supported")
    if path.suffix in (RAW_SUFFIX, SIDECAR_SUFFIX):
        grid = _load_raw(path.with_suffix(RAW_SUFFIX))
    elif path.suffix == ".nii":
        grid = _load_nifti(path)
    else:
        raise VolumeFormatError(str(path), "expected a .nii or .raw file name")
    return _check_kind(grid, kind, path)


def _affine(grid: VolumeGrid) -> np.ndarray:
    affine = np.diag([*grid.spacing, 1.0])
    affine[:3, 3] = grid.origin
    return affine


def _save_nifti(grid: VolumeGrid, path: Path, dtype: np.dtype) -> None:
    affine = _affine(grid)
    image = nib.Nifti1Image(np.asarray(grid.values, dtype=dtype.newbyteorder("<")), affine)
    image.header.set_data_dtype(dtype)
    image.header.set_xyzt_units("mm")
    image.set_qform(affine, code=1)
    image.set_sform(affine, code=1)
    nib.save(image, str(path))
    logger.debug(f"Wrote {grid.dims} {dtype} volume to {path}")


def _load_nifti(path: Path) -> VolumeGrid:
    if not path.is_file():
        raise VolumeFormatError(str(path), "file not found")
    try:
        image = nib.load(str(path))
    except Exception as e:
        raise VolumeFormatError(str(path), f"not a readable NIfTI file ({e})") from e
    if not isinstance(image, nib.Nifti1Image):
        raise VolumeFormatError(str(path), f"expected single-file NIfTI-1, got {type(image).__name__}")

    header = image.header
    if bytes(header["magic"]) != NIFTI_MAGIC:
        raise VolumeFormatError(str(path), f"bad magic {bytes(header['magic'])!r}")
    if int(header["sizeof_hdr"]) != NIFTI_HEADER_SIZE or int(header["vox_offset"]) != NIFTI_DATA_OFFSET:
        raise VolumeFormatError(str(path), "header size or data offset outside the supported subset")
    if header.endianness != "<":
        raise VolumeFormatError(str(path), "big-endian files are not supported")
    datatype = int(header["datatype"])
    if datatype not in SUPPORTED_DATATYPES:
        raise VolumeFormatError(str(path), f"unsupported NIfTI datatype code {datatype}")
    if len(image.shape) != 3:
        raise VolumeFormatError(str(path), f"expected a 3D volume, got shape {image.shape}")

    affine = image.affine
    linear = affine[:3, :3]
    spacing = np.diag(linear)
    if not np.allclose(linear, np.diag(spacing), atol=1e-6) or np.any(spacing <= 0):
        raise VolumeFormatError(str(path), "oblique or flipped orientations are not supported")

    try:
        if datatype == 2:
            values = _narrow(np.asarray(image.dataobj, dtype=np.uint8))
        else:
            values = image.get_fdata(dtype=np.float32)
    except Exception as e:
        raise VolumeFormatError(str(path), f"truncated or unreadable voxel data ({e})") from e

    return VolumeGrid(values, tuple(float(s) for s in spacing), tuple(float(o) for o in affine[:3, 3]))


def _save_raw(grid: VolumeGrid, path: Path, dtype: np.dtype) -> None:
    little = dtype.newbyteorder("<")
    np.asarray(grid.values, dtype=little).ravel(order="F").tofile(path)
    sidecar = {
        "dims": list(grid.dims),
        "spacing": list(grid.spacing),
        "origin": list(grid.origin),
        "dtype": little.name,
        "byte_order": "little",
        "order": "x-fastest",
    }
    path.with_suffix(SIDECAR_SUFFIX).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def _load_raw(path: Path) -> VolumeGrid:
    sidecar_path = path.with_suffix(SIDECAR_SUFFIX)
    if not path.is_file() or not sidecar_path.is_file():
        raise VolumeFormatError(str(path), "raw volume needs both the .raw file and its .json sidecar")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        dims = tuple(int(d) for d in sidecar["dims"])
        dtype = np.dtype(sidecar["dtype"]).newbyteorder("<")
        spacing = tuple(float(s) for s in sidecar["spacing"])
        origin = tuple(float(o) for o in sidecar["origin"])
    except (KeyError, TypeError, ValueError) as e:
        raise VolumeFormatError(str(sidecar_path), f"malformed sidecar ({e})") from e
    if dtype.type not in SUPPORTED_DATATYPES.values():
        raise VolumeFormatError(str(path), f"unsupported datatype {dtype}")

    flat = np.fromfile(path, dtype=dtype)
    expected = int(np.prod(dims))
    if flat.size != expected:
        raise VolumeFormatError(str(path), f"expected {expected} voxels, found {flat.size}")
    values = flat.reshape(dims, order="F")
    values = _narrow(values) if dtype.type == np.uint8 else values.astype(np.float32)
    return VolumeGrid(values, spacing, origin)


def _narrow(values: np.ndarray) -> np.ndarray:
    """Byte data stays uint8 only when it is binary; anything else is an intensity volume."""
    if values.size and values.max() > 1:
        return values.astype(np.float32)
    return values
