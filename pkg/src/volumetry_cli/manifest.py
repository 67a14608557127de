"""
Cohort manifest: one CSV row per subject with station paths, optional mask paths and optional
reference measurements. Relative paths resolve against the manifest's directory.
"""

import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from volumetry_core.constants import STATION_INDICES
from volumetry_core.exceptions import ManifestError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("subject_id", "station2", "station3")
MASK_COLUMNS = ("mask2", "mask3")
REFERENCE_COLUMNS = ("ref_vol_left_cm3", "ref_vol_right_cm3", "ref_vol_total_cm3", "ref_distance_mm")


@dataclass(frozen=True)
class ManifestRow:
    subject_id: str
    station2: Path
    station3: Path
    mask2: Path | None = None
    mask3: Path | None = None
    # Reference measurement name (without the ``ref_`` prefix) to value
    reference: dict[str, float] = field(default_factory=dict)

    def station(self, index: int) -> Path:
        return self.station2 if index == 2 else self.station3

    def mask(self, index: int) -> Path | None:
        return self.mask2 if index == 2 else self.mask3

    def files(self) -> list[Path]:
        return [p for p in (self.station2, self.station3, self.mask2, self.mask3) if p is not None]


@dataclass(frozen=True)
class Manifest:
    rows: tuple[ManifestRow, ...]
    path: Path | None = None

    def __len__(self) -> int:
        return len(self.rows)

    def mask_paths(self) -> dict[tuple[str, int], str]:
        """Explicit mask paths keyed by (subject_id, station index)."""
        paths = {}
        for row in self.rows:
            for index in STATION_INDICES:
                mask = row.mask(index)
                if mask is not None:
                    paths[(row.subject_id, index)] = str(mask)
        return paths

    def references(self) -> pd.DataFrame:
        """Reference measurements as a frame indexed by subject_id (possibly without columns)."""
        records = [{"subject_id": row.subject_id, **row.reference} for row in self.rows if row.reference]
        return pd.DataFrame.from_records(records, columns=["subject_id", *(c[4:] for c in REFERENCE_COLUMNS)])


def _resolve(base: Path, value) -> Path | None:
    if value is None or (isinstance(value, float) and pd.isna(value)) or str(value).strip() == "":
        return None
    path = Path(str(value).strip())
    return path if path.is_absolute() else base / path


def read_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    """
    Load and validate a manifest.

    Raises:
        ManifestError: On a missing or empty file, missing columns, duplicate subject ids, bad
            reference values, or (with ``check_files``) any referenced file that does not exist.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"Manifest {path} not found")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ManifestError(f"Cannot parse manifest {path}: {e}") from e

    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ManifestError(f"Manifest {path} lacks required columns: {', '.join(missing)}")
    if frame.empty:
        raise ManifestError(f"Manifest {path} has no subjects")

    ids = frame["subject_id"].str.strip()
    if (ids == "").any():
        raise ManifestError(f"Manifest {path} has rows without a subject_id")
    duplicates = sorted(set(ids[ids.duplicated()]))
    if duplicates:
        raise ManifestError(f"Duplicate subject ids in manifest: {', '.join(duplicates)}")

    base = path.parent
    rows = []
    for record, subject_id in zip(frame.to_dict(orient="records"), ids, strict=True):
        reference = {}
        for column in REFERENCE_COLUMNS:
            raw = str(record.get(column, "")).strip()
            if raw:
                try:
                    reference[column[4:]] = float(raw)
                except ValueError as e:
                    raise ManifestError(f"Subject {subject_id}: {column} is not a number ({raw!r})") from e
        rows.append(
            ManifestRow(
                subject_id=subject_id,
                station2=_resolve(base, record["station2"]) or base,
                station3=_resolve(base, record["station3"]) or base,
                mask2=_resolve(base, record.get("mask2")),
                mask3=_resolve(base, record.get("mask3")),
                reference=reference,
            )
        )

    manifest = Manifest(tuple(rows), path)
    if check_files:
        check_manifest_files(manifest)
    logger.info(f"Loaded manifest {path} with {len(manifest)} subjects")
    return manifest


def check_manifest_files(manifest: Manifest) -> None:
    """Fail fast when any referenced file is missing."""
    problems = []
    for row in manifest.rows:
        for file in row.files():
            if not file.is_file():
                problems.append(f"{row.subject_id}: {file}")
    if problems:
        shown = "; ".join(problems[:10])
        more = f" (and {len(problems) - 10} more)" if len(problems) > 10 else ""
        raise ManifestError(f"Manifest references missing files: {shown}{more}")


def write_manifest(rows: Iterable[ManifestRow], path: str | Path) -> Path:
    """Write rows as a manifest, storing paths relative to the manifest's directory when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def rel(p: Path | None) -> str:
        if p is None:
            return ""
        try:
            return Path(p).resolve().relative_to(base).as_posix()
        except ValueError:
            return str(p)

    records = []
    for row in sorted(rows, key=lambda r: r.subject_id):
        record = {
            "subject_id": row.subject_id,
            "station2": rel(row.station2),
            "station3": rel(row.station3),
            "mask2": rel(row.mask2),
            "mask3": rel(row.mask3),
        }
        for column in REFERENCE_COLUMNS:
            value = row.reference.get(column[4:])
            record[column] = "" if value is None else repr(float(value))
        records.append(record)
    pd.DataFrame.from_records(
        records, columns=[*REQUIRED_COLUMNS, *MASK_COLUMNS, *REFERENCE_COLUMNS]
    ).to_csv(path, index=False)
    return path
