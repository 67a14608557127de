"""Network-input preprocessing: slice trimming, per-slice normalization and the 2.5D stack contract."""

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from .constants import CLIP_FRACTION, N_TRIM, PAD_SHAPE, STATION_DIMS
from .exceptions import GeometryError
from .volgrid import VolumeGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SliceStack:
    """Three padded axial planes (below, target, above) forming one 2.5D input sample."""

    target_index: int
    source_indices: tuple[int, int, int]
    planes: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self):
        shapes = {plane.shape for plane in self.planes}
        if len(self.planes) != 3 or len(shapes) != 1:
            raise GeometryError(f"stack planes must be three planes of one shape, got {shapes}")
        for plane in self.planes:
            if plane.size and (plane.min() < 0.0 or plane.max() > 1.0):
                raise ValueError("stack planes must be normalized to [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        rows, cols = self.planes[0].shape
        return (rows, cols)

    def as_array(self) -> np.ndarray:
        """The sample as a ``(rows, cols, 3)`` array."""
        return np.stack(self.planes, axis=-1)


def trim_station(station: VolumeGrid, n_trim: int = N_TRIM) -> VolumeGrid:
    """
    Drop the ``n_trim`` lowest and highest axial slices of a station.

    Raises:
        GeometryError: If the station has no more than ``2 * n_trim`` slices.
    """
    if n_trim < 0:
        raise GeometryError(f"n_trim must be non-negative, got {n_trim}", 2)
    nz = station.dims[2]
    if nz <= 2 * n_trim:
        raise GeometryError(f"cannot trim {n_trim} slices from each end of a {nz}-slice station", 2)
    if n_trim == 0:
        return station

    origin = (station.origin[0], station.origin[1], station.origin[2] + n_trim * station.spacing[2])
    return VolumeGrid(station.values[:, :, n_trim : nz - n_trim], station.spacing, origin)


def clip_value(values: np.ndarray, clip_fraction: float) -> float:
    """Nearest-rank ``(1 - clip_fraction)`` quantile of ``values``."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    rank = max(1, math.ceil((1.0 - clip_fraction) * flat.size - 1e-9))
    return float(np.partition(flat, rank - 1)[rank - 1])


def normalize_slice(plane: np.ndarray, clip_fraction: float = CLIP_FRACTION) -> np.ndarray:
    """
    Clip the brightest ``clip_fraction`` of a slice and min-max map the rest into [0, 1].

    Only a constant slice maps to zeros. When fewer than ``clip_fraction`` of the voxels rise above
    the minimum, the clip value collapses onto the minimum and the slice maximum is used instead.
    """
    values = np.asarray(plane, dtype=np.float64)
    if values.size == 0:
        raise GeometryError("cannot normalize an empty slice")
    if not 0.0 <= clip_fraction < 1.0:
        raise ValueError(f"clip_fraction must be in [0, 1), got {clip_fraction}")

    lo = float(values.min())
    top = float(values.max())
    if top <= lo:
        return np.zeros(values.shape, dtype=np.float32)
    hi = clip_value(values, clip_fraction)
    if hi <= lo:
        hi = top
    return ((np.minimum(values, hi) - lo) / (hi - lo)).astype(np.float32)


def normalize_station(station: VolumeGrid, clip_fraction: float = CLIP_FRACTION) -> VolumeGrid:
    """Apply :func:`normalize_slice` to every axial slice independently."""
    normalized = np.empty(station.dims, dtype=np.float32)
    for z in range(station.dims[2]):
        normalized[:, :, z] = normalize_slice(station.values[:, :, z], clip_fraction)
    return station.with_values(normalized)


def _pad_widths(shape: tuple[int, ...], pad_shape: tuple[int, int]) -> list[tuple[int, int]]:
    widths = []
    for axis, (size, target) in enumerate(zip(shape, pad_shape, strict=True)):
        total = target - size
        if total < 0:
            raise GeometryError(f"plane size {size} exceeds padded size {target}", axis)
        # Odd remainders put the extra column on the high side
        widths.append((total // 2, total - total // 2))
    return widths


def pad_plane(plane: np.ndarray, pad_shape: tuple[int, int] = PAD_SHAPE) -> np.ndarray:
    """Symmetric zero-padding of an axial plane to ``pad_shape``."""
    return np.pad(plane, _pad_widths(plane.shape, pad_shape), mode="constant", constant_values=0)


def make_stack(station: VolumeGrid, z: int, pad_shape: tuple[int, int] = PAD_SHAPE) -> SliceStack:
    """
    Build the 2.5D sample centred on slice ``z`` with a periodic border condition.

    ``station`` must already be trimmed and normalized per slice.
    """
    nz = station.dims[2]
    if not 0 <= z < nz:
        raise GeometryError(f"slice index {z} outside 0..{nz - 1}", 2)

    indices = ((z - 1) % nz, z, (z + 1) % nz)
    below, target, above = (pad_plane(station.values[:, :, i], pad_shape) for i in indices)
    return SliceStack(target_index=z, source_indices=indices, planes=(below, target, above))


def iter_stacks(station: VolumeGrid, pad_shape: tuple[int, int] = PAD_SHAPE) -> Iterator[SliceStack]:
    for z in range(station.dims[2]):
        yield make_stack(station, z, pad_shape)


def unpad_labels(
    padded: np.ndarray,
    original_shape: tuple[int, int] = (STATION_DIMS[0], STATION_DIMS[1]),
    pad_shape: tuple[int, int] = PAD_SHAPE,
) -> np.ndarray:
    """
    Revert :func:`pad_plane` on a predicted label plane.

    Raises:
        GeometryError: If ``padded`` does not have ``pad_shape``.
    """
    if tuple(padded.shape) != tuple(pad_shape):
        raise GeometryError(f"padded plane has shape {padded.shape}, expected {tuple(pad_shape)}")
    (x_lo, _), (y_lo, _) = _pad_widths(original_shape, pad_shape)
    return padded[x_lo : x_lo + original_shape[0], y_lo : y_lo + original_shape[1]]
