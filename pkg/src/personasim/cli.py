"""Command-line entry points for the pipeline stages.

Subcommands: generate, annotate, match, survey, evaluate, ngram, ablate,
report. The config path comes from --config or the PERSONASIM_CONFIG
environment variable; API keys are only ever read from the environment.
Exit code is 0 only when the stage fully succeeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .demographics import option_sets_json
from .reference import human_reference_json
from .surveys import ConditioningMethod, Study, study_bank_json

log = logging.getLogger(__name__)


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        default=os.environ.get("PERSONASIM_CONFIG"),
        help="pipeline config file (or set PERSONASIM_CONFIG)",
    )


def _load_config(args) -> pipeline.PipelineConfig:
    if not args.config:
        raise pipeline.StageError("config", "no config file given (use --config)")
    return pipeline.load_config(args.config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="personasim",
        description="Virtual-persona survey pipeline",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate the backstory pool")
    _add_config_arg(p)
    p.add_argument("--count", type=int, default=None)

    p = sub.add_parser("annotate", help="annotate backstories with trait distributions")
    _add_config_arg(p)

    p = sub.add_parser("match", help="match the human roster to personas")
    _add_config_arg(p)
    p.add_argument("--roster", required=True)

    p = sub.add_parser("survey", help="administer studies to the matched cohort")
    _add_config_arg(p)
    p.add_argument("--study", action="append", choices=[s.value for s in Study])
    p.add_argument("--method", choices=[m.value for m in ConditioningMethod],
                   help="conditioning method (overrides config)")
    p.add_argument("--mode", choices=["token_scores", "sampled"],
                   help="measurement mode (overrides config)")
    p.add_argument("--samples", type=int, help="samples per cell in sampled mode")

    p = sub.add_parser("evaluate", help="compute gap reports")
    _add_config_arg(p)
    p.add_argument("--study", action="append", choices=[s.value for s in Study])
    p.add_argument("--human-responses", help="human microdata CSV for WD columns")
    p.add_argument(
        "--human-only", action="store_true",
        help="emit only the stored human baseline rows",
    )

    p = sub.add_parser("ngram", help="n-gram counting over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--phrase", default=None)
    p.add_argument("--format", choices=["jsonl", "txt"], default=None,
                   help="corpus format (sniffed from suffix when omitted)")
    p.add_argument("--report", choices=["table", "csv"], default="table")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("ablate", help="run a factor sweep")
    _add_config_arg(p)
    p.add_argument("--axis", required=True, choices=["count", "length", "consistency"])
    p.add_argument("--levels", required=True,
                   help="comma-separated levels (e.g. 1,2,5,10 or critic_on,critic_off)")
    p.add_argument("--roster", default=None)
    p.add_argument("--human-responses", default=None)
    p.add_argument("--count", type=int, default=None)

    p = sub.add_parser("report", help="render stored reports and export constants")
    _add_config_arg(p)
    p.add_argument("--format", choices=["table", "csv"], default="table")
    p.add_argument("--export-human-refs", default=None)
    p.add_argument("--export-banks", default=None)
    p.add_argument("--export-option-sets", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surface unexpected failures with a clean line
        log.debug("unhandled error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "generate":
        stats = pipeline.cmd_generate(_load_config(args), args.count)
        print(json.dumps(stats, sort_keys=True))
        return 0
    if args.command == "annotate":
        stats = pipeline.cmd_annotate(_load_config(args))
        print(json.dumps(stats, sort_keys=True))
        return 0 if not stats["unannotated"] else 1
    if args.command == "match":
        stats = pipeline.cmd_match(_load_config(args), args.roster)
        print(json.dumps(stats, sort_keys=True))
        return 0
    if args.command == "survey":
        config = _load_config(args)
        overrides = {}
        if args.method:
            overrides["method"] = args.method
        if args.mode:
            overrides["survey_mode"] = args.mode
        if args.samples:
            overrides["survey_samples"] = args.samples
        if overrides:
            config = dataclasses.replace(config, **overrides)
        studies = args.study or list(config.studies)
        failed = 0
        for study in studies:
            stats = pipeline.cmd_survey(config, study)
            print(f"{study}: {stats['cells']} cells, {len(stats['failures'])} failures")
            failed += len(stats["failures"])
        return 0 if failed == 0 else 1
    if args.command == "evaluate":
        config = _load_config(args)
        complete = pipeline.cmd_evaluate(
            config,
            args.study,
            human_responses=args.human_responses,
            human_only=args.human_only,
        )
        print((config.storage_root / "report.txt").read_text(encoding="utf-8"))
        return 0 if complete else 1
    if args.command == "ngram":
        text = pipeline.cmd_ngram(
            args.corpus,
            n=args.n,
            k=args.k,
            phrase=args.phrase,
            fmt=args.format,
            lowercase=args.lowercase,
            workers=args.workers,
            out=args.out,
            report=args.report,
        )
        print(text, end="" if text.endswith("\n") else "\n")
        return 0
    if args.command == "ablate":
        config = _load_config(args)
        levels = [lv.strip() for lv in args.levels.split(",") if lv.strip()]
        rows = pipeline.cmd_ablate(
            config,
            args.axis,
            levels,
            roster=args.roster,
            human_responses=args.human_responses,
            count=args.count,
        )
        for row in rows:
            print(json.dumps(row, sort_keys=True))
        return 0
    if args.command == "report":
        return _cmd_report(args)
    raise pipeline.StageError("cli", f"unknown command {args.command!r}")


def _cmd_report(args) -> int:
    if args.export_human_refs:
        Path(args.export_human_refs).write_text(human_reference_json(), encoding="utf-8")
        print(f"wrote {args.export_human_refs}")
    if args.export_banks:
        banks = {s.value: study_bank_json(s) for s in Study}
        Path(args.export_banks).write_text(
            json.dumps(banks, indent=2, sort_keys=True), encoding="utf-8"
        )
        print(f"wrote {args.export_banks}")
    if args.export_option_sets:
        Path(args.export_option_sets).write_text(
            json.dumps(option_sets_json(), indent=2, sort_keys=True), encoding="utf-8"
        )
        print(f"wrote {args.export_option_sets}")
    if args.export_human_refs or args.export_banks or args.export_option_sets:
        return 0
    config = _load_config(args)
    suffix = "csv" if args.format == "csv" else "txt"
    path = config.storage_root / f"report.{suffix}"
    if not path.exists():
        raise pipeline.StageError("report", f"no stored report at {path}; run evaluate first")
    print(path.read_text(encoding="utf-8"), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
