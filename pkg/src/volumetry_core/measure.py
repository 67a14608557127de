import logging
import math
from dataclasses import dataclass

import numpy as np

from .constants import MM3_PER_CM3
from .morphology import KidneyPair
from .volgrid import Triple, VolumeGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeasurementRecord:
    subject_id: str
    vol_left_cm3: float
    vol_right_cm3: float
    # Every labelled voxel of the fused volume, scrap included
    vol_total_cm3: float
    com_left: Triple | None
    com_right: Triple | None
    distance_mm: float | None
    scrap_share: float

    def __post_init__(self):
        if (self.distance_mm is None) != (self.com_left is None or self.com_right is None):
            raise ValueError("distance must be present exactly when both kidneys are")
        if not 0.0 <= self.scrap_share <= 1.0:
            raise ValueError(f"scrap share {self.scrap_share} outside [0, 1]")

    @property
    def vol_combined_cm3(self) -> float:
        """Left plus right kidney, scrap excluded."""
        return self.vol_left_cm3 + self.vol_right_cm3

    @property
    def offset_mm(self) -> Triple | None:
        """Left minus right centre of mass, per axis."""
        if self.com_left is None or self.com_right is None:
            return None
        dx, dy, dz = (left - right for left, right in zip(self.com_left, self.com_right, strict=True))
        return (dx, dy, dz)


def measure_volume(voxels: int | np.ndarray | VolumeGrid, spacing: Triple) -> float:
    """Volume in cm³ of a voxel count, boolean mask or label grid at the given spacing (mm)."""
    if any(s <= 0 for s in spacing):
        raise ValueError(f"spacing must be positive, got {spacing}")
    if isinstance(voxels, VolumeGrid):
        count = voxels.labelled_count()
    elif isinstance(voxels, np.ndarray):
        count = int(np.count_nonzero(voxels))
    else:
        count = int(voxels)
    return count * spacing[0] * spacing[1] * spacing[2] / MM3_PER_CM3


def kidney_distance(pair: KidneyPair) -> float | None:
    """Euclidean distance (mm) between the kidneys' centres of mass, None unless both exist."""
    if pair.left is None or pair.right is None:
        return None
    return math.dist(pair.left.com.position, pair.right.com.position)


def measure_subject(subject_id: str, labels: VolumeGrid, pair: KidneyPair) -> MeasurementRecord:
    """Build the measurement record of one subject from its fused labels and kidney pair."""
    spacing = labels.spacing
    total = labels.labelled_count()
    return MeasurementRecord(
        subject_id=subject_id,
        vol_left_cm3=measure_volume(pair.left.size if pair.left else 0, spacing),
        vol_right_cm3=measure_volume(pair.right.size if pair.right else 0, spacing),
        vol_total_cm3=measure_volume(total, spacing),
        com_left=pair.left.com.position if pair.left else None,
        com_right=pair.right.com.position if pair.right else None,
        distance_mm=kidney_distance(pair),
        scrap_share=pair.scrap_voxels / max(1, total),
    )
