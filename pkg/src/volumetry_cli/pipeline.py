import logging
from dataclasses import dataclass

from volumetry_core.constants import STATION_INDICES
from volumetry_core.exceptions import StageError
from volumetry_core.fusion import FusedVolume, fuse
from volumetry_core.measure import MeasurementRecord, measure_subject
from volumetry_core.morphology import connected_components, split_pair, volume_midline_x
from volumetry_core.preprocess import trim_station
from volumetry_core.qc import QualityReport, rate_subject
from volumetry_core.segmenter import build_segmenter
from volumetry_core.volgrid import StationPair
from volumetry_core.volume_io import load_volume

from .config import PipelineSettings
from .manifest import ManifestRow

logger = logging.getLogger(__name__)

STAGES = ("load", "trim", "segment", "fuse", "components", "measure", "qc")


@dataclass(frozen=True)
class FailureRow:
    subject_id: str
    stage: str
    error_type: str
    message: str


@dataclass(frozen=True, eq=False)
class SubjectResult:
    subject_id: str
    record: MeasurementRecord | None = None
    report: QualityReport | None = None
    failure: FailureRow | None = None
    # Only kept on request (single-subject debugging); cohort runs drop it to bound memory
    fused: FusedVolume | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None


class _Stage:
    """Tags any exception raised inside the block with the pipeline stage."""

    def __init__(self, subject_id: str, name: str):
        self.subject_id = subject_id
        self.name = name

    def __enter__(self):
        logger.debug(f"{self.name} started", extra={"subject": self.subject_id})
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, Exception) and not isinstance(exc, StageError):
            raise StageError(self.subject_id, self.name, exc) from exc
        return False


def load_stations(row: ManifestRow) -> StationPair:
    return StationPair(row.subject_id, load_volume(row.station2), load_volume(row.station3))


def _process(row: ManifestRow, settings: PipelineSettings, keep_volumes: bool) -> SubjectResult:
    sid = row.subject_id
    with _Stage(sid, "load"):
        stations = load_stations(row)
    with _Stage(sid, "trim"):
        upper = trim_station(stations.station2, settings.N_TRIM)
        lower = trim_station(stations.station3, settings.N_TRIM)
    with _Stage(sid, "segment"):
        mask_paths = {(sid, i): str(row.mask(i)) for i in STATION_INDICES if row.mask(i) is not None}
        segmenter = build_segmenter(settings.segmenter_spec(mask_paths))
        upper_labels = segmenter.segment(upper, sid, 2)
        lower_labels = segmenter.segment(lower, sid, 3)
    with _Stage(sid, "fuse"):
        fused = fuse(upper, lower, upper_labels, lower_labels, settings.LABEL_THRESHOLD)
    with _Stage(sid, "components"):
        components = connected_components(fused.labels, settings.CONNECTIVITY)
        pair = split_pair(components, volume_midline_x(fused.labels))
    with _Stage(sid, "measure"):
        record = measure_subject(sid, fused.labels, pair)
    with _Stage(sid, "qc"):
        report = rate_subject(sid, upper, lower, upper_labels, lower_labels, fused, pair)
    return SubjectResult(sid, record, report, fused=fused if keep_volumes else None)


def run_subject(row: ManifestRow, settings: PipelineSettings, keep_volumes: bool = False) -> SubjectResult:
    """
    Run trim, segmentation, fusion, component analysis, measurement and rating for one subject.

    Never raises for a per-subject problem: the failing stage comes back as a failure row.
    """
    try:
        result = _process(row, settings, keep_volumes)
    except StageError as e:
        original = e.original_error
        logger.warning(
            f"Subject {row.subject_id} failed at {e.stage}: {type(original).__name__}: {original}",
            extra={"subject": row.subject_id},
        )
        return SubjectResult(
            row.subject_id,
            failure=FailureRow(row.subject_id, e.stage, type(original).__name__, str(original)),
        )
    logger.debug(f"Subject {row.subject_id} done", extra={"subject": row.subject_id})
    return result
