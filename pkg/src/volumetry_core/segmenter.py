"""
Producers of per-station binary labels.

This is the seam where a segmentation network plugs in. Two implementations ship with the pipeline:
a threshold baseline that runs through the same 2.5D stack contract a network would see, and an
importer for masks written to disk by an external inference process.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .constants import CLIP_FRACTION, N_TRIM, PAD_SHAPE, SegmenterKind
from .exceptions import MaskNotFound, MaskShapeMismatch
from .preprocess import iter_stacks, normalize_station, trim_station, unpad_labels
from .volgrid import VolumeGrid, same_geometry
from .volume_io import load_volume

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmenterSpec:
    """
    Which segmenter runs and its kind-specific parameters.

    ``threshold_baseline`` reads ``threshold`` and ``clip_fraction``; ``external_masks`` reads
    ``mask_dir`` (keyed lookup) and ``n_trim`` (for masks stored in raw station geometry).
    """

    kind: SegmenterKind
    params: dict[str, Any] = field(default_factory=dict)


class Segmenter(Protocol):
    def segment(self, station: VolumeGrid, subject_id: str = "", station_index: int = 0) -> VolumeGrid: ...


class ThresholdSegmenter:
    """Labels voxels whose per-slice normalized intensity exceeds a fixed fraction."""

    def __init__(self, threshold: float = 0.5, clip_fraction: float = CLIP_FRACTION, pad_shape=PAD_SHAPE):
        if not 0.0 <= threshold < 1.0:
            raise ValueError(f"threshold fraction must be in [0, 1), got {threshold}")
        self.threshold = threshold
        self.clip_fraction = clip_fraction
        self.pad_shape = tuple(pad_shape)

    def segment(self, station: VolumeGrid, subject_id: str = "", station_index: int = 0) -> VolumeGrid:
        normalized = normalize_station(station, self.clip_fraction)
        in_plane = station.dims[:2]
        labels = np.zeros(station.dims, dtype=np.uint8)
        for stack in iter_stacks(normalized, self.pad_shape):
            predicted = (stack.planes[1] > self.threshold).astype(np.uint8)
            labels[:, :, stack.target_index] = unpad_labels(predicted, in_plane, self.pad_shape)
        return station.with_values(labels)


class ExternalMaskSegmenter:
    """
    Imports label volumes produced elsewhere.

    Masks are looked up by explicit path or as ``<mask_dir>/<subject_id>_station<index>_mask.nii``.
    A mask in raw (untrimmed) station geometry is trimmed like its station.
    """

    def __init__(self, mask_dir: str | Path | None = None, n_trim: int = N_TRIM):
        self.mask_dir = Path(mask_dir) if mask_dir else None
        self.n_trim = n_trim
        self._explicit: dict[tuple[str, int], Path] = {}

    def register(self, subject_id: str, station_index: int, path: str | Path) -> None:
        self._explicit[(subject_id, station_index)] = Path(path)

    def mask_path(self, subject_id: str, station_index: int) -> Path:
        explicit = self._explicit.get((subject_id, station_index))
        if explicit is not None:
            return explicit
        base = self.mask_dir or Path(".")
        return base / f"{subject_id}_station{station_index}_mask.nii"

    def segment(self, station: VolumeGrid, subject_id: str = "", station_index: int = 0) -> VolumeGrid:
        path = self.mask_path(subject_id, station_index)
        if not path.is_file() and not path.with_suffix(".raw").is_file():
            raise MaskNotFound(subject_id, station_index, str(path))
        mask = load_volume(path if path.is_file() else path.with_suffix(".raw"), kind="labels")

        untrimmed_z = station.dims[2] + 2 * self.n_trim
        if mask.dims == station.dims:
            pass
        elif self.n_trim and mask.dims[:2] == station.dims[:2] and mask.dims[2] == untrimmed_z:
            mask = trim_station(mask, self.n_trim)
        else:
            raise MaskShapeMismatch(station.dims, mask.dims)

        if not same_geometry(mask.geometry, station.geometry, atol=1e-3):
            logger.warning(f"Mask geometry differs from station {station_index} of {subject_id}; keeping the station's")
        return station.with_values(mask.values)


def build_segmenter(spec: SegmenterSpec) -> ThresholdSegmenter | ExternalMaskSegmenter:
    if spec.kind is SegmenterKind.THRESHOLD_BASELINE:
        return ThresholdSegmenter(
            threshold=float(spec.params.get("threshold", 0.5)),
            clip_fraction=float(spec.params.get("clip_fraction", CLIP_FRACTION)),
            pad_shape=spec.params.get("pad_shape", PAD_SHAPE),
        )
    segmenter = ExternalMaskSegmenter(spec.params.get("mask_dir"), int(spec.params.get("n_trim", N_TRIM)))
    for (subject_id, station_index), path in spec.params.get("mask_paths", {}).items():
        segmenter.register(subject_id, station_index, path)
    return segmenter


def segment_station(
    station: VolumeGrid,
    spec: SegmenterSpec,
    subject_id: str = "",
    station_index: int = 0,
) -> VolumeGrid:
    """
    Label one trimmed station; the result always has the station's geometry.

    Raises:
        MaskNotFound: If an external mask is missing.
        MaskShapeMismatch: If an external mask does not fit the station.
    """
    return build_segmenter(spec).segment(station, subject_id, station_index)
