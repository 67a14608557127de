"""
Volumetric data model shared by every pipeline stage.

Grids are axis-aligned: voxel (i, j, k) sits at ``origin + (i, j, k) * spacing`` in scanner
millimetres, with the axis convention of :class:`volumetry_core.constants.Axis`. Arrays are held
with shape ``(nx, ny, nz)``; their flat serialization order is x-fastest (Fortran order), which is
what the volume file formats store.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import EmptyMaskError, GeometryError

logger = logging.getLogger(__name__)

Triple = tuple[float, float, float]
IndexTriple = tuple[int, int, int]

# Tolerance (in source voxels) for deciding whether a sample lies inside a grid's extent
EXTENT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GridGeometry:
    """Dimensions, spacing (mm per voxel) and origin (mm, centre of voxel 0) of an axis-aligned grid."""

    dims: IndexTriple
    spacing: Triple
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.dims) != 3 or len(self.spacing) != 3 or len(self.origin) != 3:
            raise GeometryError("geometry needs three dims, spacings and origin components")
        for axis in range(3):
            if int(self.dims[axis]) < 1:
                raise GeometryError(f"degenerate grid: dimension {self.dims[axis]}", axis)
            if not float(self.spacing[axis]) > 0:
                raise GeometryError(f"spacing must be positive, got {self.spacing[axis]}", axis)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def extent_min(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64)

    @property
    def extent_max(self) -> np.ndarray:
        """World position of the centre of the last voxel along each axis."""
        return self.extent_min + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)

    @property
    def voxel_volume_mm3(self) -> float:
        return float(np.prod(self.spacing))

    def world_axis(self, axis: int) -> np.ndarray:
        """World coordinates of the voxel centres along one axis."""
        return self.origin[axis] + np.arange(self.dims[axis], dtype=np.float64) * self.spacing[axis]

    def crop_z(self, start: int, stop: int) -> "GridGeometry":
        """Geometry of the slab of slices ``start <= z < stop``."""
        if not 0 <= start < stop <= self.dims[2]:
            raise GeometryError(f"slice range [{start}, {stop}) outside 0..{self.dims[2]}", 2)
        origin = (self.origin[0], self.origin[1], self.origin[2] + start * self.spacing[2])
        return GridGeometry((self.dims[0], self.dims[1], stop - start), self.spacing, origin)


@dataclass(frozen=True)
class CenterOfMass:
    position: Triple
    mass: int


@dataclass(frozen=True, eq=False)
class VolumeGrid:
    """
    An immutable 3D scalar field with physical geometry.

    Intensity grids hold float32 values; label grids hold uint8 values restricted to {0, 1}.
    """

    values: np.ndarray
    spacing: Triple
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise GeometryError(f"volume must be 3D, got shape {values.shape}")
        if values.dtype == np.bool_:
            values = values.astype(np.uint8)
        elif values.dtype != np.uint8:
            values = values.astype(np.float32, copy=False)
        if values.dtype == np.uint8 and values.size and values.max() > 1:
            raise GeometryError("label grid may only contain 0 and 1")

        # Validates dims and spacing
        geometry = GridGeometry(values.shape, self.spacing, self.origin)

        view = values.view()
        view.flags.writeable = False
        object.__setattr__(self, "values", view)
        object.__setattr__(self, "spacing", geometry.spacing)
        object.__setattr__(self, "origin", geometry.origin)

    @classmethod
    def from_geometry(cls, geometry: GridGeometry, values: np.ndarray) -> "VolumeGrid":
        if tuple(values.shape) != geometry.dims:
            raise GeometryError(f"values of shape {values.shape} do not fit dims {geometry.dims}")
        return cls(values, geometry.spacing, geometry.origin)

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.dims, self.spacing, self.origin)

    @property
    def dims(self) -> IndexTriple:
        nx, ny, nz = self.values.shape
        return (nx, ny, nz)

    @property
    def is_labels(self) -> bool:
        return self.values.dtype == np.uint8

    def with_values(self, values: np.ndarray) -> "VolumeGrid":
        """A grid with the same geometry and new values."""
        return VolumeGrid.from_geometry(self.geometry, values)

    def as_labels(self) -> "VolumeGrid":
        """Reinterpret as a label grid; values must already be exactly 0 or 1."""
        if self.is_labels:
            return self
        if not np.isin(self.values, (0.0, 1.0)).all():
            raise GeometryError("cannot interpret non-binary values as labels")
        return self.with_values(self.values.astype(np.uint8))

    def mask(self) -> np.ndarray:
        """Boolean view of the labelled voxels."""
        return self.values > 0

    def labelled_count(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True, eq=False)
class StationPair:
    """The two kidney-covering stations of one subject; station 2 lies above station 3."""

    subject_id: str
    station2: VolumeGrid
    station3: VolumeGrid

    def station(self, index: int) -> VolumeGrid:
        if index == 2:
            return self.station2
        if index == 3:
            return self.station3
        raise ValueError(f"no station {index} in a kidney station pair")


def same_geometry(a: GridGeometry, b: GridGeometry, atol: float = 1e-6) -> bool:
    return (
        a.dims == b.dims
        and np.allclose(a.spacing, b.spacing, rtol=0, atol=atol)
        and np.allclose(a.origin, b.origin, rtol=0, atol=atol)
    )


def require_same_geometry(a: VolumeGrid, b: VolumeGrid) -> None:
    if not same_geometry(a.geometry, b.geometry):
        raise GeometryError(f"geometry mismatch: {a.geometry} vs {b.geometry}")


def voxel_to_world(grid: VolumeGrid | GridGeometry, index: IndexTriple) -> Triple:
    """World position (mm) of a voxel centre."""
    geometry = grid.geometry if isinstance(grid, VolumeGrid) else grid
    for axis in range(3):
        if not 0 <= index[axis] < geometry.dims[axis]:
            raise GeometryError(f"index {index[axis]} out of bounds 0..{geometry.dims[axis] - 1}", axis)
    x, y, z = (geometry.origin[axis] + index[axis] * geometry.spacing[axis] for axis in range(3))
    return (x, y, z)


def world_to_voxel(grid: VolumeGrid | GridGeometry, position: Triple) -> IndexTriple:
    """Nearest voxel index to a world position."""
    geometry = grid.geometry if isinstance(grid, VolumeGrid) else grid
    index = []
    for axis in range(3):
        i = int(round((position[axis] - geometry.origin[axis]) / geometry.spacing[axis]))
        if not 0 <= i < geometry.dims[axis]:
            raise GeometryError(f"position {position[axis]:.3f} mm falls outside the grid", axis)
        index.append(i)
    return (index[0], index[1], index[2])


def _snap(values: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    rounded = np.round(values)
    return np.where(np.abs(values - rounded) < tol, rounded, values)


def _source_transform(source: GridGeometry, target: GridGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal scale and offset mapping target voxel indices to source voxel coordinates."""
    source_spacing = np.asarray(source.spacing)
    scale = _snap(np.asarray(target.spacing) / source_spacing)
    offset = _snap((np.asarray(target.origin) - np.asarray(source.origin)) / source_spacing)
    return scale, offset


def coverage(source: GridGeometry, target: GridGeometry) -> np.ndarray:
    """Boolean mask over ``target`` of voxels whose centres fall inside the extent of ``source``."""
    scale, offset = _source_transform(source, target)
    inside = []
    for axis in range(3):
        coords = np.arange(target.dims[axis]) * scale[axis] + offset[axis]
        inside.append(
            (coords >= -EXTENT_TOLERANCE) & (coords <= source.dims[axis] - 1 + EXTENT_TOLERANCE)
        )
    return inside[0][:, None, None] & inside[1][None, :, None] & inside[2][None, None, :]


def resample_trilinear(source: VolumeGrid, target: GridGeometry) -> VolumeGrid:
    """
    Trilinear interpolation of ``source`` at every voxel centre of ``target``.

    Samples outside the source extent are 0. The result is always an intensity (float32) grid,
    also for label input, so that labels can be blended before thresholding.

    Raises:
        GeometryError: If the target geometry is degenerate.
    """
    if not isinstance(target, GridGeometry):
        raise GeometryError("resampling target must be a GridGeometry")
    if source.values.size == 0:
        raise GeometryError("cannot resample an empty source")

    scale, offset = _source_transform(source.geometry, target)
    data = source.values.astype(np.float32, copy=False)

    if np.all(scale == 1.0) and np.all(offset == np.round(offset)):
        # Whole-voxel shift: a straight copy keeps values bit-identical
        values = _integer_shift(data, offset.astype(int), target.dims)
    else:
        values = ndimage.affine_transform(
            data,
            scale,
            offset=offset,
            output_shape=target.dims,
            output=np.float32,
            order=1,
            mode="nearest",
        )
        values *= coverage(source.geometry, target)
    return VolumeGrid.from_geometry(target, values)


def _integer_shift(data: np.ndarray, offset: np.ndarray, dims: IndexTriple) -> np.ndarray:
    out = np.zeros(dims, dtype=np.float32)
    src_slices, dst_slices = [], []
    for axis in range(3):
        start = max(0, -offset[axis])
        stop = min(dims[axis], data.shape[axis] - offset[axis])
        if stop <= start:
            return out
        dst_slices.append(slice(start, stop))
        src_slices.append(slice(start + offset[axis], stop + offset[axis]))
    out[tuple(dst_slices)] = data[tuple(src_slices)]
    return out


def center_of_mass(labels: VolumeGrid) -> CenterOfMass:
    """
    Unweighted mean world position of all labelled voxels.

    Raises:
        EmptyMaskError: If no voxel is labelled.
    """
    mask = labels.mask()
    mass = int(np.count_nonzero(mask))
    if mass == 0:
        raise EmptyMaskError("label grid")
    index_com = np.asarray(ndimage.center_of_mass(mask), dtype=np.float64)
    position = np.asarray(labels.origin) + index_com * np.asarray(labels.spacing)
    return CenterOfMass((float(position[0]), float(position[1]), float(position[2])), mass)
