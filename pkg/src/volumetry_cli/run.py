import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pandas as pd

from volumetry_core.exceptions import ConfigError, ManifestError, PhantomSpecError, VolumetryError
from volumetry_core.metrics import format_agreement_table
from volumetry_core.phantom import CohortMember, generate, generate_cohort, write_phantom
from volumetry_core.qc import apply_flagging, rating_curves
from volumetry_core.volume_io import save_volume

from . import reports
from .cohort import run_cohort
from .config import PipelineSettings, load_settings
from .logging_config import get_logger, setup_logging
from .manifest import ManifestRow, read_manifest, write_manifest
from .pipeline import run_subject

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INCOMPLETE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="volumetry", description="Kidney volumetry pipeline for two-station MR volumes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
        p.add_argument("--config", type=Path, help="KEY = value config file")
        p.add_argument("--workers", type=int, help="worker processes (overrides WORKERS)")
        if manifest:
            p.add_argument("--manifest", type=Path, required=True, help="cohort manifest CSV")

    p = sub.add_parser("phantom", help="generate a synthetic phantom cohort")
    common(p, manifest=False)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--artifacts", type=int, default=0, help="subjects that get an injected artifact")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("run", help="run the cohort pipeline")
    common(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("qc", help="re-flag an existing qc.csv under the configured policy")
    common(p, manifest=False)
    p.add_argument("--qc", type=Path, required=True, help="qc.csv of an earlier run")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("validate", help="agreement tables of predicted vs reference measurements")
    common(p, manifest=False)
    p.add_argument("--predicted", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--out", type=Path, help="also write agreement.txt and bland_altman.csv here")

    debug_commands = (("fuse", "write one subject's fused image and labels"), ("measure", "print one subject's record"))
    for name, text in debug_commands:
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--subject", required=True)
        if name == "fuse":
            p.add_argument("--out", type=Path, required=True)
    return parser


def _render(member: CohortMember, out_dir: Path) -> ManifestRow:
    phantom = generate(member.spec, member.seed, member.subject_id)
    files = write_phantom(phantom, out_dir)
    reference = {k: v for k, v in phantom.reference_measurements().items() if v is not None}
    return ManifestRow(member.subject_id, files.station2, files.station3, files.mask2, files.mask3, reference)


def cmd_phantom(args, settings: PipelineSettings) -> int:
    members = generate_cohort(args.count, args.seed, args.artifacts)
    out_dir: Path = args.out
    workers = args.workers or settings.WORKERS
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_render, members, [out_dir] * len(members)))
    else:
        rows = [_render(member, out_dir) for member in members]

    manifest_path = write_manifest(rows, out_dir / "manifest.csv")
    reference = pd.DataFrame.from_records(
        [{"subject_id": r.subject_id, **r.reference} for r in rows],
        columns=["subject_id", "vol_left_cm3", "vol_right_cm3", "vol_total_cm3", "distance_mm"],
    )
    reference.to_csv(out_dir / "reference.csv", index=False, lineterminator="\n")
    artifacts = pd.DataFrame.from_records(
        [vars(m.artifact) for m in members if m.artifact is not None],
        columns=["subject_id", "kind", "severity", "description"],
    )
    artifacts.to_csv(out_dir / "artifacts.csv", index=False, lineterminator="\n")
    logger.info(f"Wrote {len(rows)} phantom subjects; manifest at {manifest_path}")
    return EXIT_OK


def cmd_run(args, settings: PipelineSettings) -> int:
    manifest = read_manifest(args.manifest)
    report = run_cohort(manifest, settings, args.out, workers=args.workers)
    print(report.summary_text(), end="")
    return EXIT_OK


def cmd_qc(args, settings: PipelineSettings) -> int:
    policy = settings.flagging_policy()
    flagged = apply_flagging(reports.read_qc(args.qc), policy)
    args.out.mkdir(parents=True, exist_ok=True)
    reports.write_qc(flagged, args.out / "qc.csv")
    reports.write_flags(flagged, args.out / "flags.csv")
    reports.write_rating_curves(rating_curves(flagged, policy), args.out / "rating_curves.csv")
    print(reports.format_counts(flagged, 0))
    return EXIT_OK


def cmd_validate(args, settings: PipelineSettings) -> int:
    predicted = reports.read_measurements(args.predicted)
    reference = reports.read_measurements(args.reference)
    try:
        rows = reports.compare_measurements(predicted, reference)
    except ValueError as e:
        logger.error(str(e))
        return EXIT_USAGE
    table = format_agreement_table(rows)
    print(table)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "agreement.txt").write_text(table + "\n", encoding="utf-8")
        reports.write_bland_altman(reports.bland_altman_points(predicted, reference), args.out / "bland_altman.csv")
    return EXIT_OK


def _subject_row(args) -> ManifestRow:
    manifest = read_manifest(args.manifest, check_files=False)
    for row in manifest.rows:
        if row.subject_id == args.subject:
            return row
    raise ManifestError(f"Subject {args.subject} is not in {args.manifest}")


def cmd_fuse(args, settings: PipelineSettings) -> int:
    result = run_subject(_subject_row(args), settings, keep_volumes=True)
    if result.failure is not None or result.fused is None:
        print(f"{args.subject} failed: {result.failure}", file=sys.stderr)
        return EXIT_INCOMPLETE
    save_volume(result.fused.image, args.out / f"{args.subject}_fused_image.nii")
    save_volume(result.fused.labels, args.out / f"{args.subject}_fused_labels.nii")
    logger.info(f"Wrote fused volumes of {args.subject} to {args.out}")
    return EXIT_OK


def cmd_measure(args, settings: PipelineSettings) -> int:
    result = run_subject(_subject_row(args), settings)
    if result.failure is not None or result.record is None or result.report is None:
        print(f"{args.subject} failed: {result.failure}", file=sys.stderr)
        return EXIT_INCOMPLETE
    print(reports.measurements_frame([result.record]).T.to_string(header=False))
    print(reports.qc_frame([result.report]).T.to_string(header=False))
    return EXIT_OK


COMMANDS = {
    "phantom": cmd_phantom,
    "run": cmd_run,
    "qc": cmd_qc,
    "validate": cmd_validate,
    "fuse": cmd_fuse,
    "measure": cmd_measure,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.config, WORKERS=args.workers)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    setup_logging(settings.LOG_LEVEL, settings.LOG_DIR)

    try:
        return COMMANDS[args.command](args, settings)
    except (ConfigError, ManifestError, PhantomSpecError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (VolumetryError, OSError, ValueError) as e:
        logger.exception(f"{args.command} could not complete: {e}")
        return EXIT_INCOMPLETE


def cli() -> None:
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        # Handle Ctrl+C gracefully
        sys.exit(EXIT_INCOMPLETE)


if __name__ == "__main__":
    cli()
