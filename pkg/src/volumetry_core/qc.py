"""
Algorithmic quality-cost ratings and the two-stage percentile exclusion protocol.

Five ratings are computed per subject, each with "higher is worse": image fusion and segmentation
fusion (disagreement of the two stations inside their overlap), location (longitudinal offset of the
kidneys from the middle of the fused volume), smoothness (slice-to-slice label changes) and scrap
(share of labelled voxels outside the two kidneys). Fusion and smoothness costs keep their raw sums
next to a per-voxel normalized value so cohorts with differing overlap sizes rank fairly.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import EMPTY_SEGMENTATION_COST, LABEL_THRESHOLD, Rating
from .exceptions import EmptyMaskError, StationOverlapError
from .fusion import FusedVolume, ZRange, overlap_pair
from .morphology import KidneyPair
from .volgrid import VolumeGrid, center_of_mass

logger = logging.getLogger(__name__)

EMPTY_SEGMENTATION = "empty_segmentation"

STAGE1_DEFAULTS = {Rating.LOCATION: 0.01, Rating.IMAGE_FUSION: 0.01, Rating.SEGMENTATION_FUSION: 0.02}
STAGE2_DEFAULTS = {Rating.SMOOTHNESS: 0.01, Rating.SCRAP: 0.01}


@dataclass(frozen=True)
class Cost:
    raw: float
    normalized: float

    def __post_init__(self):
        for value in (self.raw, self.normalized):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"costs must be finite and non-negative, got {value}")


@dataclass(frozen=True)
class QualityReport:
    subject_id: str
    image_fusion: Cost
    segmentation_fusion: Cost
    location_cost: float
    smoothness: Cost
    scrap_cost: float
    empty_segmentation: bool = False
    # Labelled voxels reach the first or last retained slice
    touches_z_border: bool = False
    stage1_flagged: bool = False
    stage2_flagged: bool = False
    stage1_reasons: tuple[str, ...] = ()
    stage2_reasons: tuple[str, ...] = ()
    # Location-only stage-1 flag lifted by the automated re-inclusion rule (an approximation)
    reincluded: bool = False

    def __post_init__(self):
        for value in (self.location_cost, self.scrap_cost):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"costs must be finite and non-negative, got {value}")

    def rating(self, rating: Rating, normalized: bool = True) -> float:
        match rating:
            case Rating.IMAGE_FUSION:
                cost = self.image_fusion
            case Rating.SEGMENTATION_FUSION:
                cost = self.segmentation_fusion
            case Rating.SMOOTHNESS:
                cost = self.smoothness
            case Rating.LOCATION:
                return self.location_cost
            case Rating.SCRAP:
                return self.scrap_cost
            case _:
                raise ValueError(f"unknown rating {rating}")
        return cost.normalized if normalized else cost.raw

    @property
    def flagged(self) -> bool:
        return self.stage1_flagged or self.stage2_flagged

    def cleared(self) -> "QualityReport":
        """The same ratings with every flag removed."""
        return replace(
            self,
            stage1_flagged=False,
            stage2_flagged=False,
            stage1_reasons=(),
            stage2_reasons=(),
            reincluded=False,
        )


@dataclass(frozen=True)
class FlaggingPolicy:
    """
    Fractions of worst subjects excluded per rating.

    Stage 1 ranks the whole cohort on image-quality ratings; stage 2 ranks only the stage-1 survivors
    on segmentation-quality ratings. A rating may appear in one stage only.
    """

    stage1: dict[Rating, float] = field(default_factory=lambda: dict(STAGE1_DEFAULTS))
    stage2: dict[Rating, float] = field(default_factory=lambda: dict(STAGE2_DEFAULTS))
    use_normalized: bool = True
    auto_reinclude: bool = True

    def __post_init__(self):
        for stage in (self.stage1, self.stage2):
            for rating, fraction in stage.items():
                if not isinstance(rating, Rating):
                    raise ValueError(f"unknown rating {rating!r}")
                if not 0.0 < fraction < 1.0:
                    raise ValueError(f"flagging fraction for {rating} must be in (0, 1), got {fraction}")
        shared = set(self.stage1) & set(self.stage2)
        if shared:
            raise ValueError(f"ratings used in both stages: {sorted(shared)}")


@dataclass(frozen=True)
class CurvePoint:
    rating: Rating
    stage: int
    rank: int
    subject_id: str
    cost: float
    # Inside the flagged top fraction of this rating
    beyond_cutoff: bool


def _fusion_samples(a: VolumeGrid, b: VolumeGrid, overlap: ZRange | None):
    samples = overlap_pair(a, b, overlap)
    if samples.voxel_count == 0:
        raise StationOverlapError(0.0, samples.geometry.spacing[2])
    return samples


def image_fusion_cost(a_img: VolumeGrid, b_img: VolumeGrid, overlap: ZRange | None = None) -> Cost:
    """
    Intensity disagreement of two stations inside their overlap.

    ``raw`` is the sum of absolute differences divided by the intensity range of both stations'
    overlap values; ``normalized`` additionally divides by the overlap voxel count.

    Raises:
        StationOverlapError: If the stations share no voxel.
    """
    samples = _fusion_samples(a_img, b_img, overlap)
    upper = samples.upper[samples.mask].astype(np.float64)
    lower = samples.lower[samples.mask].astype(np.float64)
    both = np.concatenate([upper, lower])
    value_range = float(both.max() - both.min())
    if value_range <= 0.0:
        return Cost(0.0, 0.0)
    raw = float(np.abs(upper - lower).sum()) / value_range
    return Cost(raw, raw / samples.voxel_count)


def segmentation_fusion_cost(a_lab: VolumeGrid, b_lab: VolumeGrid, overlap: ZRange | None = None) -> Cost:
    """
    Number of overlap voxels on which the two stations' labels disagree, raw and per overlap voxel.

    Raises:
        StationOverlapError: If the stations share no voxel.
    """
    samples = _fusion_samples(a_lab, b_lab, overlap)
    upper = samples.upper[samples.mask] >= LABEL_THRESHOLD
    lower = samples.lower[samples.mask] >= LABEL_THRESHOLD
    disagreements = int(np.count_nonzero(upper != lower))
    return Cost(float(disagreements), disagreements / samples.voxel_count)


def location_cost(labels: VolumeGrid) -> float:
    """
    Longitudinal offset of the labelled centre of mass from the middle slice of the fused volume,
    in units of half the z extent: 0 in the middle, 1 on the first or last slice.

    Raises:
        EmptyMaskError: If nothing is labelled.
    """
    com = center_of_mass(labels)
    geometry = labels.geometry
    z_min, z_max = float(geometry.extent_min[2]), float(geometry.extent_max[2])
    half_extent = (z_max - z_min) / 2.0
    if half_extent <= 0.0:
        return 0.0
    return abs(com.position[2] - (z_min + half_extent)) / half_extent


def smoothness_cost(labels: VolumeGrid) -> Cost:
    """Label changes between consecutive slices, raw and per labelled voxel."""
    values = labels.mask().astype(np.int8)
    raw = float(np.abs(np.diff(values, axis=2)).sum())
    return Cost(raw, raw / max(1, labels.labelled_count()))


def scrap_cost(pair: KidneyPair, total_labeled: int) -> float:
    if total_labeled < 0:
        raise ValueError(f"labelled voxel count cannot be negative, got {total_labeled}")
    return pair.scrap_voxels / max(1, total_labeled)


def touches_z_border(labels: VolumeGrid) -> bool:
    """Whether any labelled voxel lies on the first or last slice."""
    mask = labels.mask()
    return bool(mask[:, :, 0].any() or mask[:, :, -1].any())


def rate_subject(
    subject_id: str,
    a_img: VolumeGrid,
    b_img: VolumeGrid,
    a_lab: VolumeGrid,
    b_lab: VolumeGrid,
    fused: FusedVolume,
    pair: KidneyPair,
) -> QualityReport:
    """Compute all five ratings of one subject from its trimmed stations and their fusion."""
    labels = fused.labels
    total = labels.labelled_count()
    try:
        location = location_cost(labels)
        empty = False
    except EmptyMaskError:
        logger.warning(f"Subject {subject_id} has an empty segmentation")
        location = EMPTY_SEGMENTATION_COST
        empty = True

    return QualityReport(
        subject_id=subject_id,
        image_fusion=image_fusion_cost(a_img, b_img, fused.overlap_z_range),
        segmentation_fusion=segmentation_fusion_cost(a_lab, b_lab, fused.overlap_z_range),
        location_cost=location,
        smoothness=smoothness_cost(labels),
        scrap_cost=scrap_cost(pair, total),
        empty_segmentation=empty,
        touches_z_border=touches_z_border(labels),
    )


def nearest_rank_count(fraction: float, n: int) -> int:
    """Number of subjects in the worst ``fraction`` of ``n`` by nearest rank (at least one)."""
    if n <= 0:
        return 0
    return min(n, max(1, math.ceil(fraction * n - 1e-9)))


def worst(reports: list[QualityReport], rating: Rating, fraction: float, normalized: bool = True) -> list[str]:
    """Subject ids of the nearest-rank worst fraction; ties resolve by subject id."""
    ranked = sorted(reports, key=lambda r: (-r.rating(rating, normalized), r.subject_id))
    return [r.subject_id for r in ranked[: nearest_rank_count(fraction, len(ranked))]]


def _flag_stage(
    reports: list[QualityReport],
    fractions: dict[Rating, float],
    normalized: bool,
) -> dict[str, list[str]]:
    reasons: dict[str, list[str]] = {}
    for rating, fraction in fractions.items():
        for subject_id in worst(reports, rating, fraction, normalized):
            reasons.setdefault(subject_id, []).append(rating.value)
    return reasons


def apply_flagging(reports: list[QualityReport], policy: FlaggingPolicy) -> list[QualityReport]:
    """
    Run the two-stage exclusion protocol over a cohort.

    Stage 1 flags the union of the worst fractions of each stage-1 rating plus every empty
    segmentation. With ``auto_reinclude`` a subject flagged on location alone is re-included when its
    labels stay clear of the first and last slice. Stage 2 then ranks the survivors only.

    Returns:
        New reports sorted by subject id, with flags and per-rating attribution set.
    """
    if not reports:
        raise ValueError("cannot flag an empty cohort")
    ids = [r.subject_id for r in reports]
    if len(set(ids)) != len(ids):
        raise ValueError("subject ids must be unique")

    cohort = sorted((r.cleared() for r in reports), key=lambda r: r.subject_id)
    stage1 = _flag_stage(cohort, policy.stage1, policy.use_normalized)
    for report in cohort:
        if report.empty_segmentation:
            stage1.setdefault(report.subject_id, []).append(EMPTY_SEGMENTATION)

    flagged: list[QualityReport] = []
    for report in cohort:
        reasons = tuple(stage1.get(report.subject_id, ()))
        if not reasons:
            flagged.append(report)
        elif policy.auto_reinclude and reasons == (Rating.LOCATION.value,) and not report.touches_z_border:
            flagged.append(replace(report, reincluded=True))
        else:
            flagged.append(replace(report, stage1_flagged=True, stage1_reasons=reasons))

    survivors = [r for r in flagged if not r.stage1_flagged]
    stage2 = _flag_stage(survivors, policy.stage2, policy.use_normalized) if survivors else {}
    result = [
        replace(r, stage2_flagged=True, stage2_reasons=tuple(stage2[r.subject_id])) if r.subject_id in stage2 else r
        for r in flagged
    ]

    counts = flag_counts(result)
    logger.info(
        f"Flagged {counts['stage1_flagged']} subjects in stage 1 and {counts['stage2_flagged']} in stage 2; "
        f"{counts['surviving']} of {counts['processed']} survive ({counts['reincluded']} re-included)"
    )
    return result


def flag_counts(reports: list[QualityReport]) -> dict[str, int]:
    stage1 = sum(r.stage1_flagged for r in reports)
    stage2 = sum(r.stage2_flagged for r in reports)
    return {
        "processed": len(reports),
        "stage1_flagged": stage1,
        "stage2_flagged": stage2,
        "surviving": len(reports) - stage1 - stage2,
        "reincluded": sum(r.reincluded for r in reports),
    }


def rating_curves(reports: list[QualityReport], policy: FlaggingPolicy) -> list[CurvePoint]:
    """
    Each rating's costs sorted worst first, the data behind a rating-distribution plot.

    Stage-1 ratings cover the whole cohort; stage-2 ratings cover the stage-1 survivors of
    ``reports`` as flagged.
    """
    points: list[CurvePoint] = []
    survivors = [r for r in reports if not r.stage1_flagged]
    for stage, fractions, population in ((1, policy.stage1, reports), (2, policy.stage2, survivors)):
        for rating, fraction in fractions.items():
            ranked = sorted(population, key=lambda r: (-r.rating(rating, policy.use_normalized), r.subject_id))
            cutoff = nearest_rank_count(fraction, len(ranked))
            points.extend(
                CurvePoint(
                    rating=rating,
                    stage=stage,
                    rank=rank + 1,
                    subject_id=r.subject_id,
                    cost=r.rating(rating, policy.use_normalized),
                    beyond_cutoff=rank < cutoff,
                )
                for rank, r in enumerate(ranked)
            )
    return points
