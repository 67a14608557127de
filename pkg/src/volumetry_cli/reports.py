"""
Report files of a cohort run.

CSV schemas (version 1, header row mandatory, rows sorted by subject_id, no timestamps):

* ``measurements.csv``: subject_id, vol_left_cm3, vol_right_cm3, vol_total_cm3, distance_mm, scrap_share,
  vol_combined_cm3, offset_x_mm, offset_y_mm, offset_z_mm
* ``qc.csv``: subject_id, each fusion and smoothness cost as ``<rating>_raw`` and normalized ``<rating>``,
  location, scrap, empty_segmentation, touches_z_border, the stage flags, their reasons and reincluded
* ``flags.csv``: subject_id, status, stage1_reasons, stage2_reasons, reincluded
* ``failures.csv``: subject_id, stage, error_type, message
* ``rating_curves.csv``: rating, stage, rank, subject_id, cost, beyond_cutoff

Empty cells mean "absent" (e.g. the distance of a subject with one kidney).
"""

import json
import logging
import math
from collections.abc import Iterable
from pathlib import Path
from typing import Any

import pandas as pd

from volumetry_core.measure import MeasurementRecord
from volumetry_core.metrics import AgreementRow, AgreementSummary, PairedSeries, agreement
from volumetry_core.qc import Cost, CurvePoint, QualityReport, flag_counts

from .pipeline import FailureRow

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

MEASUREMENT_COLUMNS = [
    "subject_id",
    "vol_left_cm3",
    "vol_right_cm3",
    "vol_total_cm3",
    "distance_mm",
    "scrap_share",
    "vol_combined_cm3",
    "offset_x_mm",
    "offset_y_mm",
    "offset_z_mm",
]
QC_COLUMNS = [
    "subject_id",
    "image_fusion_raw",
    "image_fusion",
    "segmentation_fusion_raw",
    "segmentation_fusion",
    "location",
    "smoothness_raw",
    "smoothness",
    "scrap",
    "empty_segmentation",
    "touches_z_border",
    "stage1_flagged",
    "stage2_flagged",
    "stage1_reasons",
    "stage2_reasons",
    "reincluded",
]
FLAG_COLUMNS = ["subject_id", "status", "stage1_reasons", "stage2_reasons", "reincluded"]
FAILURE_COLUMNS = ["subject_id", "stage", "error_type", "message"]
CURVE_COLUMNS = ["rating", "stage", "rank", "subject_id", "cost", "beyond_cutoff"]

# Measurement columns compared by ``validate``, with their table labels
VALIDATED_COLUMNS = {
    "vol_total_cm3": "Total volume (cm³)",
    "vol_left_cm3": "Left volume (cm³)",
    "vol_right_cm3": "Right volume (cm³)",
    "distance_mm": "Distance (mm)",
}

REASON_SEPARATOR = ";"


def _write(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, na_rep="", lineterminator="\n")
    return path


def measurements_frame(records: Iterable[MeasurementRecord]) -> pd.DataFrame:
    rows = []
    for r in sorted(records, key=lambda r: r.subject_id):
        offset = r.offset_mm
        rows.append(
            {
                "subject_id": r.subject_id,
                "vol_left_cm3": r.vol_left_cm3,
                "vol_right_cm3": r.vol_right_cm3,
                "vol_total_cm3": r.vol_total_cm3,
                "distance_mm": r.distance_mm,
                "scrap_share": r.scrap_share,
                "vol_combined_cm3": r.vol_combined_cm3,
                "offset_x_mm": offset[0] if offset else None,
                "offset_y_mm": offset[1] if offset else None,
                "offset_z_mm": offset[2] if offset else None,
            }
        )
    return pd.DataFrame.from_records(rows, columns=MEASUREMENT_COLUMNS)


def write_measurements(records: Iterable[MeasurementRecord], path: str | Path) -> Path:
    return _write(measurements_frame(records), Path(path))


def _status(report: QualityReport) -> str:
    if report.stage1_flagged:
        return "stage1"
    if report.stage2_flagged:
        return "stage2"
    return "surviving"


def qc_frame(reports: Iterable[QualityReport]) -> pd.DataFrame:
    rows = [
        {
            "subject_id": r.subject_id,
            "image_fusion_raw": r.image_fusion.raw,
            "image_fusion": r.image_fusion.normalized,
            "segmentation_fusion_raw": r.segmentation_fusion.raw,
            "segmentation_fusion": r.segmentation_fusion.normalized,
            "location": r.location_cost,
            "smoothness_raw": r.smoothness.raw,
            "smoothness": r.smoothness.normalized,
            "scrap": r.scrap_cost,
            "empty_segmentation": r.empty_segmentation,
            "touches_z_border": r.touches_z_border,
            "stage1_flagged": r.stage1_flagged,
            "stage2_flagged": r.stage2_flagged,
            "stage1_reasons": REASON_SEPARATOR.join(r.stage1_reasons),
            "stage2_reasons": REASON_SEPARATOR.join(r.stage2_reasons),
            "reincluded": r.reincluded,
        }
        for r in sorted(reports, key=lambda r: r.subject_id)
    ]
    return pd.DataFrame.from_records(rows, columns=QC_COLUMNS)


def write_qc(reports: Iterable[QualityReport], path: str | Path) -> Path:
    return _write(qc_frame(reports), Path(path))


def _flag(value: Any) -> bool:
    return str(value).strip().lower() in ("true", "1")


def _reasons(value: Any) -> tuple[str, ...]:
    text = "" if value is None or (isinstance(value, float) and math.isnan(value)) else str(value)
    return tuple(part for part in text.split(REASON_SEPARATOR) if part)


def read_qc(path: str | Path) -> list[QualityReport]:
    """Load reports written by :func:`write_qc`, flags included."""
    frame = pd.read_csv(path, dtype={"subject_id": str}, keep_default_na=False)
    missing = [c for c in QC_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} is not a qc report; missing columns: {', '.join(missing)}")
    reports = []
    for row in frame.to_dict(orient="records"):
        reports.append(
            QualityReport(
                subject_id=str(row["subject_id"]),
                image_fusion=Cost(float(row["image_fusion_raw"]), float(row["image_fusion"])),
                segmentation_fusion=Cost(float(row["segmentation_fusion_raw"]), float(row["segmentation_fusion"])),
                location_cost=float(row["location"]),
                smoothness=Cost(float(row["smoothness_raw"]), float(row["smoothness"])),
                scrap_cost=float(row["scrap"]),
                empty_segmentation=_flag(row["empty_segmentation"]),
                touches_z_border=_flag(row["touches_z_border"]),
                stage1_flagged=_flag(row["stage1_flagged"]),
                stage2_flagged=_flag(row["stage2_flagged"]),
                stage1_reasons=_reasons(row["stage1_reasons"]),
                stage2_reasons=_reasons(row["stage2_reasons"]),
                reincluded=_flag(row["reincluded"]),
            )
        )
    return reports


def write_flags(reports: Iterable[QualityReport], path: str | Path) -> Path:
    rows = [
        {
            "subject_id": r.subject_id,
            "status": _status(r),
            "stage1_reasons": REASON_SEPARATOR.join(r.stage1_reasons),
            "stage2_reasons": REASON_SEPARATOR.join(r.stage2_reasons),
            "reincluded": r.reincluded,
        }
        for r in sorted(reports, key=lambda r: r.subject_id)
    ]
    return _write(pd.DataFrame.from_records(rows, columns=FLAG_COLUMNS), Path(path))


def write_failures(failures: Iterable[FailureRow], path: str | Path) -> Path:
    rows = [vars(f) for f in sorted(failures, key=lambda f: f.subject_id)]
    return _write(pd.DataFrame.from_records(rows, columns=FAILURE_COLUMNS), Path(path))


def write_rating_curves(points: Iterable[CurvePoint], path: str | Path) -> Path:
    rows = [
        {
            "rating": p.rating.value,
            "stage": p.stage,
            "rank": p.rank,
            "subject_id": p.subject_id,
            "cost": p.cost,
            "beyond_cutoff": p.beyond_cutoff,
        }
        for p in points
    ]
    return _write(pd.DataFrame.from_records(rows, columns=CURVE_COLUMNS), Path(path))


def write_run_metadata(path: str | Path, metadata: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"schema_version": SCHEMA_VERSION, **metadata}, indent=2) + "\n", encoding="utf-8")
    return path


def format_counts(reports: list[QualityReport], failures: int) -> str:
    """Exclusion accounting of a run, one line per step."""
    counts = flag_counts(reports)
    lines = [
        ("Subjects in manifest", counts["processed"] + failures),
        ("Failed (see failures.csv)", failures),
        ("Processed", counts["processed"]),
        ("Flagged in stage 1", counts["stage1_flagged"]),
        ("  of which re-included automatically", counts["reincluded"]),
        ("Flagged in stage 2", counts["stage2_flagged"]),
        ("Surviving", counts["surviving"]),
    ]
    width = max(len(label) for label, _ in lines)
    return "\n".join(f"{label.ljust(width)}  {value}" for label, value in lines)


def summarize(series: PairedSeries) -> AgreementSummary:
    """Like :func:`agreement`, but a single pair still reports MAE and SMAPE (R² and LoA are NaN)."""
    if len(series) >= 2:
        return agreement(series)
    [(_, ref, pred)] = series.entries
    diff = ref - pred
    denominator = (ref + pred) / 2.0
    smape_pct = abs(diff) / denominator * 100.0 if denominator else 0.0
    return AgreementSummary(1, abs(diff), smape_pct, math.nan, diff, math.nan, math.nan)


def _column_map(frame: pd.DataFrame, column: str) -> dict[str, float]:
    values = pd.to_numeric(frame[column], errors="coerce")
    return {sid: float(v) for sid, v in zip(frame["subject_id"], values, strict=True) if not math.isnan(v)}


def compare_measurements(predicted: pd.DataFrame, reference: pd.DataFrame) -> list[AgreementRow]:
    """
    One agreement row per validated column (total, left, right, distance).

    Subjects whose value is absent in either frame (a missing kidney has no distance) are left out of
    that column only.

    Raises:
        ValueError: If the two frames do not cover the same subject ids.
    """
    pred_ids, ref_ids = set(predicted["subject_id"]), set(reference["subject_id"])
    if pred_ids != ref_ids:
        only_pred = sorted(pred_ids - ref_ids)
        only_ref = sorted(ref_ids - pred_ids)
        raise ValueError(f"subject ids differ: only predicted {only_pred}, only reference {only_ref}")

    rows = []
    for column, label in VALIDATED_COLUMNS.items():
        if column not in predicted.columns or column not in reference.columns:
            continue
        pred, ref = _column_map(predicted, column), _column_map(reference, column)
        shared = sorted(set(pred) & set(ref))
        if not shared:
            continue
        series = PairedSeries(tuple((sid, ref[sid], pred[sid]) for sid in shared))
        rows.append(AgreementRow(label, summarize(series)))
    return rows


def read_measurements(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"subject_id": str})
    if "subject_id" not in frame.columns:
        raise ValueError(f"{path} has no subject_id column")
    return frame


def validate_measurements(predicted_csv: str | Path, reference_csv: str | Path) -> list[AgreementRow]:
    """Agreement of a predicted measurements CSV with a reference CSV of the same schema."""
    return compare_measurements(read_measurements(predicted_csv), read_measurements(reference_csv))


def bland_altman_points(predicted: pd.DataFrame, reference: pd.DataFrame) -> pd.DataFrame:
    """Plot-ready paired means and differences (reference minus predicted) per validated column."""
    rows = []
    for column in VALIDATED_COLUMNS:
        if column not in predicted.columns or column not in reference.columns:
            continue
        pred, ref = _column_map(predicted, column), _column_map(reference, column)
        for sid in sorted(set(pred) & set(ref)):
            rows.append(
                {
                    "measurement": column,
                    "subject_id": sid,
                    "reference": ref[sid],
                    "predicted": pred[sid],
                    "mean": (ref[sid] + pred[sid]) / 2.0,
                    "difference": ref[sid] - pred[sid],
                }
            )
    columns = ["measurement", "subject_id", "reference", "predicted", "mean", "difference"]
    return pd.DataFrame.from_records(rows, columns=columns)


def write_bland_altman(points: pd.DataFrame, path: str | Path) -> Path:
    return _write(points, Path(path))
