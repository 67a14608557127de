"""Fusion of two overlapping stations onto a common grid with linear blending across the overlap."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .constants import LABEL_THRESHOLD
from .exceptions import GeometryError, StationOverlapError
from .volgrid import GridGeometry, VolumeGrid, coverage, require_same_geometry, resample_trilinear

logger = logging.getLogger(__name__)

ZRange = tuple[float, float]

_TOL_MM = 1e-6


@dataclass(frozen=True, eq=False)
class FusedVolume:
    image: VolumeGrid
    labels: VolumeGrid
    # Inclusive world-z interval (mm) where both stations contributed, None when they only abut
    overlap_z_range: ZRange | None

    def __post_init__(self):
        require_same_geometry(self.image, self.labels)


@dataclass(frozen=True, eq=False)
class OverlapSamples:
    """Both stations resampled onto the overlap slab of the common grid."""

    geometry: GridGeometry
    upper: np.ndarray
    lower: np.ndarray
    # Voxels covered by both stations
    mask: np.ndarray

    @property
    def voxel_count(self) -> int:
        return int(np.count_nonzero(self.mask))


def _z_bounds(geometry: GridGeometry) -> ZRange:
    return (geometry.origin[2], float(geometry.extent_max[2]))


def order_stations(a: GridGeometry, b: GridGeometry) -> tuple[bool, GridGeometry, GridGeometry]:
    """
    Decide which station is the upper one (its z extent reaches higher).

    Returns ``(a_is_upper, upper, lower)``.
    """
    a_lo, a_hi = _z_bounds(a)
    b_lo, b_hi = _z_bounds(b)
    a_is_upper = (a_hi, a_lo) >= (b_hi, b_lo)
    return (a_is_upper, a, b) if a_is_upper else (a_is_upper, b, a)


def overlap_z_range(a: GridGeometry, b: GridGeometry) -> ZRange | None:
    """World z interval covered by both geometries, or None when they do not overlap."""
    lo = max(_z_bounds(a)[0], _z_bounds(b)[0])
    hi = min(_z_bounds(a)[1], _z_bounds(b)[1])
    if hi < lo - _TOL_MM:
        return None
    return (lo, max(lo, hi))


def common_grid(a: VolumeGrid | GridGeometry, b: VolumeGrid | GridGeometry) -> GridGeometry:
    """
    Geometry spanning the union of both stations at the finer spacing.

    Raises:
        StationOverlapError: If the z extents are separated by more than one slice.
    """
    ga = a.geometry if isinstance(a, VolumeGrid) else a
    gb = b.geometry if isinstance(b, VolumeGrid) else b

    if not np.allclose(ga.spacing[:2], gb.spacing[:2], rtol=0, atol=_TOL_MM):
        logger.warning(f"Stations differ in in-plane spacing: {ga.spacing[:2]} vs {gb.spacing[:2]}")

    spacing = np.minimum(ga.spacing, gb.spacing)
    _, upper, lower = order_stations(ga, gb)
    gap = _z_bounds(upper)[0] - _z_bounds(lower)[1]
    if gap > spacing[2] + _TOL_MM:
        raise StationOverlapError(gap, float(spacing[2]))

    origin = np.minimum(ga.extent_min, gb.extent_min)
    top = np.maximum(ga.extent_max, gb.extent_max)
    dims = tuple(math.ceil((top[axis] - origin[axis]) / spacing[axis] - _TOL_MM) + 1 for axis in range(3))
    return GridGeometry(dims, tuple(spacing), tuple(origin))


def blend_weights(geometry: GridGeometry, overlap: ZRange | None) -> np.ndarray:
    """
    Per-slice weight of the lower station: 0 at the top of the overlap, 1 at its bottom.

    Outside the overlap the weight is irrelevant since only one station covers those slices.
    """
    z = geometry.world_axis(2)
    if overlap is None:
        return np.zeros_like(z)
    bottom, top = overlap
    if top - bottom <= _TOL_MM:
        return np.full_like(z, 0.5)
    return np.clip((top - z) / (top - bottom), 0.0, 1.0)


def _blend(upper: np.ndarray, lower: np.ndarray, both: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # upper + w * (lower - upper) keeps identical inputs bit-exact
    blended = upper + weights[None, None, :].astype(np.float32) * (lower - upper)
    return np.where(both, blended, upper + lower).astype(np.float32)


def fuse(
    a_img: VolumeGrid,
    b_img: VolumeGrid,
    a_lab: VolumeGrid,
    b_lab: VolumeGrid,
    label_threshold: float = LABEL_THRESHOLD,
) -> FusedVolume:
    """
    Fuse two stations' intensities and labels onto their common grid.

    Inside the overlap the value is ``(1 - w) * upper + w * lower`` with ``w`` ramping linearly from
    0 at the top of the overlap to 1 at its bottom. Labels are blended the same way and thresholded
    at ``label_threshold`` (ties count as labelled).
    """
    require_same_geometry(a_img, a_lab)
    require_same_geometry(b_img, b_lab)

    target = common_grid(a_img, b_img)
    a_is_upper, _, _ = order_stations(a_img.geometry, b_img.geometry)
    upper_img, lower_img = (a_img, b_img) if a_is_upper else (b_img, a_img)
    upper_lab, lower_lab = (a_lab, b_lab) if a_is_upper else (b_lab, a_lab)

    overlap = overlap_z_range(upper_img.geometry, lower_img.geometry)
    both = coverage(upper_img.geometry, target) & coverage(lower_img.geometry, target)
    weights = blend_weights(target, overlap)

    image = _blend(
        resample_trilinear(upper_img, target).values,
        resample_trilinear(lower_img, target).values,
        both,
        weights,
    )
    label_blend = _blend(
        resample_trilinear(upper_lab, target).values,
        resample_trilinear(lower_lab, target).values,
        both,
        weights,
    )
    labels = (label_blend >= label_threshold).astype(np.uint8)

    logger.debug(f"Fused stations onto {target.dims} voxels, overlap {overlap}")
    return FusedVolume(
        image=VolumeGrid.from_geometry(target, image),
        labels=VolumeGrid.from_geometry(target, labels),
        overlap_z_range=overlap,
    )


def overlap_pair(a: VolumeGrid, b: VolumeGrid, overlap: ZRange | None = None) -> OverlapSamples:
    """
    Resample both stations onto the slab of the common grid that lies inside ``overlap``.

    Raises:
        StationOverlapError: If the stations share no slice.
    """
    if overlap is None:
        overlap = overlap_z_range(a.geometry, b.geometry)
    target = common_grid(a, b)
    if overlap is None:
        _, upper_geometry, lower_geometry = order_stations(a.geometry, b.geometry)
        gap = _z_bounds(upper_geometry)[0] - _z_bounds(lower_geometry)[1]
        raise StationOverlapError(gap, target.spacing[2])

    z = target.world_axis(2)
    inside = np.nonzero((z >= overlap[0] - _TOL_MM) & (z <= overlap[1] + _TOL_MM))[0]
    if inside.size == 0:
        raise GeometryError("overlap range contains no slice of the common grid", 2)
    slab = target.crop_z(int(inside[0]), int(inside[-1]) + 1)

    a_is_upper, _, _ = order_stations(a.geometry, b.geometry)
    upper, lower = (a, b) if a_is_upper else (b, a)
    return OverlapSamples(
        geometry=slab,
        upper=resample_trilinear(upper, slab).values,
        lower=resample_trilinear(lower, slab).values,
        mask=coverage(upper.geometry, slab) & coverage(lower.geometry, slab),
    )
