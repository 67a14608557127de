"""Agreement metrics for label masks (Dice, Jaccard) and paired measurements (MAE, SMAPE, R², LoA)."""

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .measure import measure_volume
from .volgrid import VolumeGrid, require_same_geometry

logger = logging.getLogger(__name__)

LOA_Z = 1.96


@dataclass(frozen=True)
class PairedSeries:
    # (subject_id, reference, predicted)
    entries: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        ids = [e[0] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids in a paired series must be unique")

    @classmethod
    def from_mappings(cls, reference: Mapping[str, float], predicted: Mapping[str, float]) -> "PairedSeries":
        """Pair two id-keyed value maps; their id sets must match."""
        missing = sorted(set(reference) ^ set(predicted))
        if missing:
            raise ValueError(f"subject ids differ between reference and predicted: {missing}")
        return cls(tuple((sid, float(reference[sid]), float(predicted[sid])) for sid in sorted(reference)))

    @property
    def reference(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.float64)

    @property
    def predicted(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class AgreementSummary:
    n: int
    mae: float
    smape_pct: float
    # NaN when the reference has no variance
    r2: float
    mean_diff: float
    loa_low: float
    loa_high: float


@dataclass(frozen=True)
class AgreementRow:
    """One line of an agreement table: volume agreement plus optional mask overlap scores."""

    name: str
    summary: AgreementSummary
    dice: float | None = None
    jaccard: float | None = None


def _overlap_counts(a: VolumeGrid, b: VolumeGrid) -> tuple[int, int, int]:
    require_same_geometry(a, b)
    ma, mb = a.mask(), b.mask()
    return int(np.count_nonzero(ma & mb)), int(np.count_nonzero(ma)), int(np.count_nonzero(mb))


def dice(a: VolumeGrid, b: VolumeGrid) -> float:
    """Sørensen-Dice coefficient of two label grids; two empty masks agree perfectly."""
    intersection, size_a, size_b = _overlap_counts(a, b)
    if size_a + size_b == 0:
        return 1.0
    return 2.0 * intersection / (size_a + size_b)


def jaccard(a: VolumeGrid, b: VolumeGrid) -> float:
    """Intersection over union of two label grids; two empty masks agree perfectly."""
    intersection, size_a, size_b = _overlap_counts(a, b)
    union = size_a + size_b - intersection
    if union == 0:
        return 1.0
    return intersection / union


def smape(reference: Sequence[float] | np.ndarray, predicted: Sequence[float] | np.ndarray) -> float:
    """Symmetric mean absolute percentage error; pairs summing to zero contribute 0."""
    ref = np.asarray(reference, dtype=np.float64)
    pred = np.asarray(predicted, dtype=np.float64)
    if ref.shape != pred.shape or ref.size == 0:
        raise ValueError("smape needs two equally long, non-empty series")
    denominator = (ref + pred) / 2.0
    error = np.abs(ref - pred)
    per_pair = np.divide(error, denominator, out=np.zeros_like(error), where=denominator != 0)
    return float(per_pair.mean() * 100.0)


def agreement(series: PairedSeries) -> AgreementSummary:
    """
    Agreement of predicted with reference values.

    Differences are taken as reference minus predicted, so oversegmentation gives a negative mean
    difference. Limits of agreement use the sample (n - 1) standard deviation. R² is the coefficient
    of determination about the reference mean.

    Raises:
        ValueError: If the series has fewer than two entries.
    """
    if len(series) < 2:
        raise ValueError(f"agreement needs at least two pairs, got {len(series)}")
    ref, pred = series.reference, series.predicted
    diffs = ref - pred

    ss_res = float(np.sum(diffs**2))
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan

    mean_diff = float(diffs.mean())
    spread = LOA_Z * float(np.std(diffs, ddof=1))
    return AgreementSummary(
        n=len(series),
        mae=float(np.abs(diffs).mean()),
        smape_pct=smape(ref, pred),
        r2=r2,
        mean_diff=mean_diff,
        loa_low=mean_diff - spread,
        loa_high=mean_diff + spread,
    )


def mask_agreement(
    reference: Mapping[str, VolumeGrid],
    predicted: Mapping[str, VolumeGrid],
    name: str = "",
) -> AgreementRow:
    """
    Compare two sets of fused masks keyed by subject id.

    Serves network-versus-reference validation as well as operator variability (one operator twice,
    or two operators). Volumes are compared in cm³.
    """
    missing = sorted(set(reference) ^ set(predicted))
    if missing:
        raise ValueError(f"subject ids differ between mask sets: {missing}")
    ids = sorted(reference)
    dices = [dice(reference[sid], predicted[sid]) for sid in ids]
    jaccards = [jaccard(reference[sid], predicted[sid]) for sid in ids]
    volumes = PairedSeries(
        tuple(
            (
                sid,
                measure_volume(reference[sid], reference[sid].spacing),
                measure_volume(predicted[sid], predicted[sid].spacing),
            )
            for sid in ids
        )
    )
    logger.debug(f"Compared {len(ids)} mask pairs for '{name}'")
    return AgreementRow(name, agreement(volumes), float(np.mean(dices)), float(np.mean(jaccards)))


def _fmt(value: float | None, digits: int) -> str:
    if value is None:
        return "-"
    if math.isnan(value):
        return "n/a"
    return f"{value:.{digits}f}"


def format_agreement_table(rows: Iterable[AgreementRow]) -> str:
    """Plain-text table with columns N, Dice, Jaccard, MAE, SMAPE, R² and the 95% limits of agreement."""
    header = ("", "N", "Dice", "Jaccard", "MAE", "SMAPE %", "R²", "LoA")
    lines = [header]
    for row in rows:
        s = row.summary
        lines.append(
            (
                row.name,
                str(s.n),
                _fmt(row.dice, 3),
                _fmt(row.jaccard, 3),
                _fmt(s.mae, 2),
                _fmt(s.smape_pct, 2),
                _fmt(s.r2, 3),
                f"{s.mean_diff:.2f} ({s.loa_low:.2f}, {s.loa_high:.2f})",
            )
        )
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join(" | ".join(cell.ljust(w) for cell, w in zip(line, widths, strict=True)).rstrip() for line in lines)
