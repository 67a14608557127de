import asyncio
import logging
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

from volumetry_core.measure import MeasurementRecord
from volumetry_core.metrics import AgreementRow, format_agreement_table
from volumetry_core.qc import CurvePoint, FlaggingPolicy, QualityReport, apply_flagging, flag_counts, rating_curves

from . import reports
from .config import PipelineSettings
from .manifest import Manifest, ManifestRow
from .pipeline import FailureRow, SubjectResult, run_subject

logger = logging.getLogger(__name__)

OUTPUT_FILES = {
    "measurements": "measurements.csv",
    "qc": "qc.csv",
    "flags": "flags.csv",
    "failures": "failures.csv",
    "rating_curves": "rating_curves.csv",
    "run": "run.json",
    "summary": "summary.txt",
}


@dataclass
class CohortReport:
    measurements: list[MeasurementRecord]
    reports: list[QualityReport]
    failures: list[FailureRow]
    curves: list[CurvePoint]
    metadata: dict[str, Any] = field(default_factory=dict)
    agreement: list[AgreementRow] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        counts = flag_counts(self.reports)
        return {"subjects": len(self.reports) + len(self.failures), "failed": len(self.failures), **counts}

    def summary_text(self) -> str:
        text = reports.format_counts(self.reports, len(self.failures))
        if self.agreement:
            text += "\n\nAgreement with manifest reference values\n" + format_agreement_table(self.agreement)
        return text + "\n"

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {key: out_dir / name for key, name in OUTPUT_FILES.items()}
        reports.write_measurements(self.measurements, paths["measurements"])
        reports.write_qc(self.reports, paths["qc"])
        reports.write_flags(self.reports, paths["flags"])
        reports.write_failures(self.failures, paths["failures"])
        reports.write_rating_curves(self.curves, paths["rating_curves"])
        reports.write_run_metadata(paths["run"], {**self.metadata, "counts": self.counts})
        paths["summary"].write_text(self.summary_text(), encoding="utf-8")
        logger.info(f"Wrote cohort reports to {out_dir}")
        return paths


def finalize(
    results: list[SubjectResult],
    policy: FlaggingPolicy,
    references=None,
) -> CohortReport:
    """Order-independent reduction of per-subject results: flagging, curves and reference agreement."""
    results = sorted(results, key=lambda r: r.subject_id)
    measurements = [r.record for r in results if r.ok and r.record is not None]
    raw_reports = [r.report for r in results if r.ok and r.report is not None]
    failures = [r.failure for r in results if r.failure is not None]

    flagged = apply_flagging(raw_reports, policy) if raw_reports else []
    curves = rating_curves(flagged, policy) if flagged else []

    agreement = []
    if references is not None and not references.empty and measurements:
        predicted = reports.measurements_frame(measurements)
        reference = references[references["subject_id"].isin(predicted["subject_id"])]
        predicted = predicted[predicted["subject_id"].isin(reference["subject_id"])]
        if not reference.empty:
            agreement = reports.compare_measurements(predicted, reference)
    return CohortReport(measurements, flagged, failures, curves, agreement=agreement)


class CohortRunner:
    """
    Runs every manifest row through the subject pipeline with a bounded worker pool.

    Subjects run in worker processes when more than one worker is configured, otherwise in a single
    background thread. Results are reduced in subject-id order, so reports never depend on the
    worker count or completion order.
    """

    def __init__(self, settings: PipelineSettings, workers: int | None = None):
        self.settings = settings
        self.workers = max(1, workers or settings.WORKERS)
        self._semaphore = asyncio.Semaphore(self.workers)
        self._done = 0

    def _executor(self) -> Executor:
        if self.workers > 1:
            return ProcessPoolExecutor(max_workers=self.workers)
        return ThreadPoolExecutor(max_workers=1, thread_name_prefix="volumetry")

    async def _run_one(self, executor: Executor, row: ManifestRow, total: int) -> SubjectResult:
        async with self._semaphore:
            loop = asyncio.get_running_loop()
            try:
                result = await loop.run_in_executor(executor, run_subject, row, self.settings)
            except Exception as e:
                # The worker itself died (e.g. a broken process pool)
                logger.error(f"Worker failed on subject {row.subject_id}: {e}")
                failure = FailureRow(row.subject_id, "worker", type(e).__name__, str(e))
                result = SubjectResult(row.subject_id, failure=failure)
            self._done += 1
            if self._done % 50 == 0 or self._done == total:
                logger.info(f"Processed {self._done}/{total} subjects")
            return result

    async def run(self, manifest: Manifest) -> CohortReport:
        if len(manifest) == 0:
            raise ValueError("cannot run an empty cohort")
        started = datetime.now(UTC)
        logger.info(f"Running {len(manifest)} subjects with {self.workers} worker(s)")

        with self._executor() as executor:
            tasks = [self._run_one(executor, row, len(manifest)) for row in manifest.rows]
            results = await asyncio.gather(*tasks)

        report = finalize(list(results), self.settings.flagging_policy(), manifest.references())
        report.metadata = {
            "config_hash": self.settings.config_hash(),
            "settings": self.settings.result_settings(),
            "manifest": str(manifest.path) if manifest.path else None,
            "workers": self.workers,
            "started_at": started.isoformat(timespec="seconds"),
            "finished_at": datetime.now(UTC).isoformat(timespec="seconds"),
        }
        counts = report.counts
        logger.info(
            f"Cohort done: {counts['processed']} processed, {counts['failed']} failed, "
            f"{counts['surviving']} surviving"
        )
        return report


def run_cohort(
    manifest: Manifest,
    settings: PipelineSettings,
    out_dir: str | Path | None = None,
    workers: int | None = None,
) -> CohortReport:
    """Synchronous entry point: run the cohort and, with ``out_dir``, write every report file."""
    report = asyncio.run(CohortRunner(settings, workers).run(manifest))
    if out_dir is not None:
        report.write(out_dir)
    return report
