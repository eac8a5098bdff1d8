"""Stage orchestration: configuration, persistence, manifest, ablations.

Storage is a directory of JSONL/CSV stage files plus a manifest that records
a content hash for every artifact, so downstream stages can detect missing
or hand-edited inputs. All randomness flows from the named seed in the
config; stage outputs are written in canonical key order so reruns with the
same config and seed are bit-identical regardless of worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import re
import shutil
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from . import backstory as bs
from . import demographics as demo
from . import matching as match_mod
from . import metrics as metrics_mod
from . import ngrams as ngrams_mod
from . import surveys as surveys_mod
from .llm import Backend, BackendError, HTTPBackend, StubBackend
from .reference import HUMAN_REFERENCE
from .util import atomic_write_text, derive_seed, file_sha256

log = logging.getLogger(__name__)

ROLES = ("generator", "critic", "annotator", "survey", "reflection")


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage '{stage}': {message}")


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class BackendConfig:
    kind: str = "stub"  # "stub" | "http"
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str | None = None
    script: tuple = ()
    options: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class PipelineConfig:
    storage_root: Path
    seed: int = 0
    workers: int = 1
    retry_bound: int = 4
    count: int = 4
    annotation_samples: int = 40
    survey_mode: str = "token_scores"
    survey_samples: int = 40
    score_mode: str = "sampled"
    method: str = "backstory"
    studies: tuple[str, ...] = ("atp_w110", "subversion", "meta_prejudice")
    question_bank: str | None = None
    bank_prefix: int | None = None
    critic_enabled: bool = True
    max_answer_tokens: int = 512
    backends: Mapping[str, BackendConfig] = field(default_factory=dict)
    fingerprint: str = ""
    snapshot: Mapping = field(default_factory=dict)

    def backend_for(self, role: str) -> Backend:
        cfg = self.backends.get(role) or self.backends.get("default")
        if cfg is None:
            raise StageError("config", f"no backend configured for role '{role}'")
        return build_backend(cfg)

    # storage paths -------------------------------------------------------
    @property
    def backstories_path(self) -> Path:
        return self.storage_root / "backstories.jsonl"

    @property
    def profiles_path(self) -> Path:
        return self.storage_root / "profiles.jsonl"

    @property
    def roster_path(self) -> Path:
        return self.storage_root / "roster.csv"

    @property
    def match_path(self) -> Path:
        return self.storage_root / "match.csv"

    def survey_path(self, study: str) -> Path:
        return self.storage_root / f"survey_{study}.jsonl"

    @property
    def manifest_path(self) -> Path:
        return self.storage_root / "manifest.json"


def build_backend(cfg: BackendConfig) -> Backend:
    if cfg.kind == "stub":
        return StubBackend.from_script(cfg.script)
    if cfg.kind == "http":
        if not cfg.endpoint or not cfg.model:
            raise StageError("config", "http backend needs endpoint and model")
        api_key = os.environ.get(cfg.api_key_env) if cfg.api_key_env else None
        return HTTPBackend(cfg.endpoint, cfg.model, api_key=api_key, **dict(cfg.options))
    raise StageError("config", f"unknown backend kind {cfg.kind!r}")


_ENV_VAR = re.compile(r"\$\{(\w+)\}")


def _interpolate_env(value):
    if isinstance(value, str):
        def repl(m):
            name = m.group(1)
            if name not in os.environ:
                raise StageError("config", f"environment variable {name} is not set")
            return os.environ[name]

        return _ENV_VAR.sub(repl, value)
    if isinstance(value, list):
        return [_interpolate_env(v) for v in value]
    if isinstance(value, dict):
        return {k: _interpolate_env(v) for k, v in value.items()}
    return value


def load_config(path: str | Path) -> PipelineConfig:
    """Load the declarative pipeline config with ${VAR} env interpolation."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    raw = _interpolate_env(raw)
    fingerprint = hashlib.sha256(
        json.dumps(raw, sort_keys=True).encode("utf-8")
    ).hexdigest()
    backends = {}
    for role, entry in (raw.get("backends") or {}).items():
        entry = dict(entry)
        options = dict(entry.pop("options", {}) or {})
        kind = entry.pop("kind", "stub")
        endpoint = entry.pop("endpoint", None)
        model = entry.pop("model", None)
        api_key_env = entry.pop("api_key_env", None)
        script = tuple(entry.pop("script", []) or [])
        options.update(entry)  # any leftover keys are backend options too
        backends[role] = BackendConfig(
            kind=kind,
            endpoint=endpoint,
            model=model,
            api_key_env=api_key_env,
            script=script,
            options=options,
        )
    known = {f.name for f in dataclasses.fields(PipelineConfig)} - {
        "backends", "fingerprint", "snapshot", "storage_root", "studies",
    }
    kwargs = {k: v for k, v in raw.items() if k in known}
    return PipelineConfig(
        storage_root=Path(raw.get("storage_root", "runs/default")),
        studies=tuple(raw.get("studies", ("atp_w110", "subversion", "meta_prejudice"))),
        backends=backends,
        fingerprint=fingerprint,
        snapshot=raw,
        **kwargs,
    )


# ---------------------------------------------------------------------------
# manifest

class Manifest:
    """Hash-validated registry of stage outputs under one storage root."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.path = self.root / "manifest.json"
        self.data: dict = {"stages": {}}
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
            self.data.setdefault("stages", {})

    def record_stage(
        self, stage: str, artifacts: Mapping[str, Path], *,
        config: "PipelineConfig | None" = None, stats: Mapping | None = None,
    ) -> None:
        entry = {
            "artifacts": {
                name: {
                    "path": str(Path(path).relative_to(self.root)),
                    "sha256": file_sha256(path),
                }
                for name, path in artifacts.items()
            },
            "config_fingerprint": config.fingerprint if config else "",
            "config_snapshot": dict(config.snapshot) if config else {},
            "completed_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        if stats:
            entry["stats"] = dict(stats)
        self.data["stages"][stage] = entry
        atomic_write_text(self.path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def stage(self, name: str) -> dict | None:
        return self.data["stages"].get(name)

    def verify_stage(self, name: str, *, for_stage: str) -> dict[str, Path]:
        """Check a completed upstream stage's artifacts; return their paths."""
        entry = self.stage(name)
        if entry is None:
            raise StageError(for_stage, f"upstream stage '{name}' has not completed")
        paths = {}
        for label, info in entry["artifacts"].items():
            path = self.root / info["path"]
            if not path.exists():
                raise StageError(for_stage, f"missing upstream artifact: {path}")
            if file_sha256(path) != info["sha256"]:
                raise StageError(
                    for_stage, f"artifact hash mismatch (edited or corrupt): {path}"
                )
            paths[label] = path
        return paths


# ---------------------------------------------------------------------------
# JSONL helpers

def _dump_jsonl(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _read_jsonl(path: Path, *, tolerate_torn_tail: bool = False) -> list[dict]:
    records = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if tolerate_torn_tail and i == len(lines) - 1:
                log.warning("dropping torn final line of %s", path)
                continue
            raise
    return records


# ---------------------------------------------------------------------------
# stages

def _backstory_ids(count: int) -> list[str]:
    return [f"bs-{i:04d}" for i in range(count)]


def cmd_generate(config: PipelineConfig, count: int | None = None) -> dict:
    """Generate (or resume generating) the backstory pool.

    Completed backstories are appended to the stage file as they finish, so
    an aborted run leaves resumable state; on completion the file is
    rewritten in canonical id order for byte-stable artifacts.
    """
    count = config.count if count is None else count
    if config.bank_prefix is not None:
        bank = bs.ablation_bank(config.bank_prefix)
    else:
        bank = bs.load_question_bank(config.question_bank)
    generator = config.backend_for("generator")
    critic = config.backend_for("critic") if config.critic_enabled else None

    existing: dict[str, dict] = {}
    if config.backstories_path.exists():
        for rec in _read_jsonl(config.backstories_path, tolerate_torn_tail=True):
            existing[rec["id"]] = rec

    wanted = _backstory_ids(count)
    missing = [i for i in wanted if i not in existing]
    rejection_counts: dict[str, int] = {}

    config.backstories_path.parent.mkdir(parents=True, exist_ok=True)
    append_lock = threading.Lock()
    results: list[tuple[str, dict, tuple]] = []
    with open(config.backstories_path, "a", encoding="utf-8", newline="\n") as fh:

        def build(story_id: str) -> tuple[str, dict, tuple]:
            story = bs.generate_backstory(
                bank,
                generator,
                critic,
                backstory_id=story_id,
                seed=derive_seed(config.seed, "backstory", story_id),
                retry_bound=config.retry_bound,
                max_answer_tokens=config.max_answer_tokens,
                generator_model=_role_model(config, "generator"),
            )
            record = bs.backstory_to_record(story)
            with append_lock:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
            return story_id, record, story.rejections

        try:
            if config.workers > 1 and len(missing) > 1:
                with ThreadPoolExecutor(max_workers=config.workers) as pool:
                    results = list(pool.map(build, missing))
            else:
                results = [build(i) for i in missing]
        except (bs.BackstoryError, BackendError) as exc:
            raise StageError("generate", str(exc)) from exc

    for story_id, record, rejections in results:
        existing[story_id] = record
        for rej in rejections:
            rejection_counts[rej.reason.value] = rejection_counts.get(rej.reason.value, 0) + 1

    ordered = [existing[i] for i in sorted(existing) if i in set(wanted)]
    atomic_write_text(config.backstories_path, _dump_jsonl(ordered))
    stats = {"total": len(ordered), "new": len(missing), "rejections": rejection_counts}
    Manifest(config.storage_root).record_stage(
        "generate",
        {"backstories": config.backstories_path},
        config=config,
        stats=stats,
    )
    log.info("generate: %d backstories (%d new)", len(ordered), len(missing))
    return stats


def _role_model(config: PipelineConfig, role: str) -> str:
    entry = config.backends.get(role) or config.backends.get("default")
    if entry and entry.model:
        return entry.model
    return entry.kind if entry else "stub"


def load_backstories(path: Path) -> dict[str, bs.Backstory]:
    return {
        rec["id"]: bs.backstory_from_record(rec) for rec in _read_jsonl(path)
    }


def cmd_annotate(config: PipelineConfig) -> dict:
    """Annotate every generated backstory with six trait distributions."""
    manifest = Manifest(config.storage_root)
    artifacts = manifest.verify_stage("generate", for_stage="annotate")
    stories = load_backstories(artifacts["backstories"])
    annotator = config.backend_for("annotator")

    def build(story: bs.Backstory):
        try:
            profile, evidence = demo.annotate_with_evidence(
                story,
                extractor_backend=annotator,
                sampler_backend=annotator,
                n_samples=config.annotation_samples,
                seed=derive_seed(config.seed, "annotate"),
            )
            return story.id, demo.profile_to_records(profile, evidence), None
        except demo.AnnotationError as exc:
            return story.id, None, str(exc)

    ordered_ids = sorted(stories)
    if config.workers > 1 and len(ordered_ids) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(build, [stories[i] for i in ordered_ids]))
    else:
        results = [build(stories[i]) for i in ordered_ids]

    records: list[dict] = []
    failures: dict[str, str] = {}
    for story_id, recs, error in results:
        if error is not None:
            failures[story_id] = error
            log.warning("annotation failed for %s: %s", story_id, error)
        else:
            records.extend(recs)
    atomic_write_text(config.profiles_path, _dump_jsonl(records))
    stats = {
        "annotated": len(results) - len(failures),
        "unannotated": sorted(failures),
    }
    manifest.record_stage(
        "annotate",
        {"profiles": config.profiles_path},
        config=config,
        stats=stats,
    )
    return stats


def load_profiles(path: Path) -> list[demo.PersonaProfile]:
    by_story: dict[str, list[dict]] = {}
    for rec in _read_jsonl(path):
        by_story.setdefault(rec["backstory_id"], []).append(rec)
    return [demo.profile_from_records(recs) for _, recs in sorted(by_story.items())]


def cmd_match(config: PipelineConfig, roster_path: str | Path) -> dict:
    """Assign each roster human a distinct annotated persona."""
    manifest = Manifest(config.storage_root)
    artifacts = manifest.verify_stage("annotate", for_stage="match")
    try:
        humans = match_mod.load_roster(roster_path)
        profiles = load_profiles(artifacts["profiles"])
        feasibility = match_mod.party_feasibility(humans, profiles)
        for party, counts in feasibility.items():
            log.info(
                "match feasibility %s: %d humans, %d personas with party mass",
                party, counts["humans"], counts["personas_with_mass"],
            )
        cohort = match_mod.assign_cohort(humans, profiles)
    except match_mod.MatchingError as exc:
        raise StageError("match", str(exc)) from exc
    if Path(roster_path).resolve() != config.roster_path.resolve():
        config.roster_path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(roster_path, config.roster_path)
    match_mod.write_match_csv(config.match_path, cohort)
    stats = {
        "humans": len(cohort.pairs),
        "total_weight": cohort.total_weight,
        "min_weight": cohort.min_weight,
        "mean_weight": cohort.mean_weight,
        "feasibility": feasibility,
    }
    manifest.record_stage(
        "match",
        {"match": config.match_path, "roster": config.roster_path},
        config=config,
        stats=stats,
    )
    return stats


def _build_respondents(config: PipelineConfig, manifest: Manifest, for_stage: str):
    match_artifacts = manifest.verify_stage("match", for_stage=for_stage)
    gen_artifacts = manifest.verify_stage("generate", for_stage=for_stage)
    humans = {h.id: h for h in match_mod.load_roster(match_artifacts["roster"])}
    stories = load_backstories(gen_artifacts["backstories"])
    respondents = []
    for human_id, backstory_id, _ in match_mod.read_match_csv(match_artifacts["match"]):
        human = humans[human_id]
        respondents.append(
            surveys_mod.SurveyRespondent(
                id=human_id,
                party=human.party,
                human=human,
                backstory=stories.get(backstory_id),
            )
        )
    return respondents


def cmd_survey(config: PipelineConfig, study: str) -> dict:
    """Administer one study to the matched cohort."""
    manifest = Manifest(config.storage_root)
    respondents = _build_respondents(config, manifest, for_stage="survey")
    backend = config.backend_for("survey")
    reflection_backend = (
        config.backend_for("reflection")
        if config.method == "generative_agent"
        else None
    )
    run = surveys_mod.run_study(
        study,
        respondents,
        backend,
        method=config.method,
        mode=config.survey_mode,
        n_samples=config.survey_samples,
        seed=derive_seed(config.seed, "survey", study),
        reflection_backend=reflection_backend,
        workers=config.workers,
    )
    records = surveys_mod.run_to_records(run)
    atomic_write_text(config.survey_path(study), _dump_jsonl(records))
    stats = {"cells": len(records), "failures": run.failures}
    manifest.record_stage(
        f"survey_{study}",
        {"responses": config.survey_path(study)},
        config=config,
        stats=stats,
    )
    return stats


def load_human_responses(path: str | Path):
    """Human microdata CSV (respondent_id,party,question_id,option) used for
    distribution-level comparisons."""
    responses: list[tuple[str, str, str]] = []
    parties: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        needed = {"respondent_id", "party", "question_id", "option"}
        if not needed <= set(reader.fieldnames or []):
            raise StageError("evaluate", f"human responses file missing columns {needed}")
        for row in reader:
            responses.append((row["respondent_id"], row["question_id"], row["option"]))
            parties[row["respondent_id"]] = row["party"]
    return responses, parties


def _study_grid_complete(run: surveys_mod.StudyRun) -> bool:
    questions = surveys_mod.load_study(run.study)
    for rid, party in run.parties.items():
        for question in questions:
            if question.asked_to_party(party) and (rid, question.id) not in run.distributions:
                return False
    return True


def cmd_evaluate(
    config: PipelineConfig,
    studies: Sequence[str] | None = None,
    *,
    human_responses: str | Path | None = None,
    human_only: bool = False,
) -> bool:
    """Compute gap reports for every study; returns True when complete."""
    studies = list(studies or config.studies)
    manifest = Manifest(config.storage_root)
    reports: list[metrics_mod.StudyReport] = []
    all_complete = True

    if human_only:
        for study in studies:
            rows = [
                metrics_mod.ReportRow(
                    study, party, "human",
                    HUMAN_REFERENCE[(study, party)].delta,
                    HUMAN_REFERENCE[(study, party)].cohens_d,
                    None,
                    HUMAN_REFERENCE[(study, party)].t_stat,
                    HUMAN_REFERENCE[(study, party)].stars,
                    (
                        HUMAN_REFERENCE[(study, party)].n_group_a,
                        HUMAN_REFERENCE[(study, party)].n_group_b,
                    ),
                )
                for party in ("democrat", "republican")
            ]
            reports.append(metrics_mod.StudyReport(rows, complete=True))
    else:
        micro = load_human_responses(human_responses) if human_responses else None
        for study in studies:
            artifacts = manifest.verify_stage(f"survey_{study}", for_stage="evaluate")
            match_artifacts = manifest.verify_stage("match", for_stage="evaluate")
            humans = match_mod.load_roster(match_artifacts["roster"])
            parties = {h.id: h.party for h in humans}
            records = _read_jsonl(artifacts["responses"])
            run = surveys_mod.run_from_records(study, records, parties)
            grid_ok = _study_grid_complete(run)
            gaps = []
            if records:
                scores = metrics_mod.score_table(
                    run,
                    score_mode=config.score_mode,
                    seed=derive_seed(config.seed, "score", study),
                )
                for party in ("democrat", "republican"):
                    try:
                        gaps.append(_study_gap(study, scores, run.parties, party))
                    except metrics_mod.MetricsError as exc:
                        log.warning("evaluate %s/%s: %s", study, party, exc)
            wd_by_party = None
            if micro is not None:
                responses, micro_parties = micro
                shares = metrics_mod.human_shares_from_microdata(
                    responses, micro_parties, study
                )
                wd_by_party = {
                    party: metrics_mod.study_wd(run, shares, party)
                    for party in ("democrat", "republican")
                }
            report = metrics_mod.build_report(study, gaps, wd_by_party=wd_by_party)
            report.complete = report.complete and grid_ok
            reports.append(report)
            all_complete = all_complete and report.complete

    text = metrics_mod.render_report_text(reports)
    csv_text = metrics_mod.render_report_csv(reports)
    rows_json = [
        dataclasses.asdict(row) for report in reports for row in report.rows
    ]
    report_txt = config.storage_root / "report.txt"
    report_csv = config.storage_root / "report.csv"
    gaps_json = config.storage_root / "gaps.json"
    atomic_write_text(report_txt, text)
    atomic_write_text(report_csv, csv_text)
    atomic_write_text(gaps_json, json.dumps(rows_json, indent=2, sort_keys=True) + "\n")
    manifest.record_stage(
        "evaluate",
        {"report_txt": report_txt, "report_csv": report_csv, "gaps": gaps_json},
        config=config,
        stats={"complete": all_complete, "studies": list(studies)},
    )
    if not all_complete:
        log.warning("evaluate: report has missing cells or groups")
    return all_complete


def _study_gap(study: str, scores, parties, party: str) -> metrics_mod.GapReport:
    if study == "atp_w110":
        return metrics_mod.hostility_gap(scores, parties, party)
    if study == "subversion":
        return metrics_mod.subversion_gap(scores, parties, party)
    if study == "meta_prejudice":
        return metrics_mod.meta_perception_gap(scores, parties, party)
    raise StageError("evaluate", f"unknown study {study}")


def cmd_ngram(
    corpus: str | Path,
    *,
    n: int,
    k: int = 20,
    phrase: str | None = None,
    fmt: str | None = None,
    lowercase: bool = False,
    workers: int = 1,
    out: str | Path | None = None,
    report: str = "table",
) -> str:
    """Count n-grams (optionally phrase-anchored) and render the ranking."""
    spec = ngrams_mod.NgramSpec(n=n, lowercase=lowercase)
    if phrase:
        ranked = ngrams_mod.containing_phrase(
            corpus, phrase, spec, workers=workers, fmt=fmt
        )[:k]
    else:
        table = ngrams_mod.count_ngrams(corpus, spec, workers=workers, fmt=fmt)
        ranked = ngrams_mod.top_k(table, k)
    if report == "csv":
        text = ngrams_mod.render_table_csv(ranked)
    else:
        text = ngrams_mod.render_table_text(ranked) + "\n"
    if out:
        atomic_write_text(out, text)
    return text


# ---------------------------------------------------------------------------
# ablation sweeps

_ABLATION_AXES = ("count", "length", "consistency")


def _subrun_config(config: PipelineConfig, name: str, **overrides) -> PipelineConfig:
    return dataclasses.replace(
        config, storage_root=config.storage_root / "ablate" / name, **overrides
    )


def _mean_words(stories: Mapping[str, bs.Backstory]) -> float:
    if not stories:
        return 0.0
    return sum(s.token_count for s in stories.values()) / len(stories)


def _run_downstream(
    sub: PipelineConfig, roster: str | Path | None, human_responses,
) -> dict[str, float | None]:
    """Match + survey + evaluate for an ablation sub-run; returns per-party WD
    (None when no human distribution is available)."""
    wd = {"democrat": None, "republican": None}
    if roster is None:
        return wd
    cmd_annotate(sub)
    cmd_match(sub, roster)
    for study in sub.studies:
        cmd_survey(sub, study)
    cmd_evaluate(sub, human_responses=human_responses)
    if human_responses is not None:
        gaps = json.loads((sub.storage_root / "gaps.json").read_text())
        for row in gaps:
            if row["source"] == "model" and row["wd"] is not None:
                wd[row["party"]] = row["wd"]
    return wd


def cmd_ablate(
    config: PipelineConfig,
    axis: str,
    levels: Sequence,
    *,
    roster: str | Path | None = None,
    human_responses: str | Path | None = None,
    count: int | None = None,
) -> list[dict]:
    """Sweep one factor (pool count, backstory length, critic filtering) and
    emit a level-by-level table of pool statistics and, when a human
    distribution is supplied, per-party Wasserstein distances."""
    if axis not in _ABLATION_AXES:
        raise StageError("ablate", f"unknown axis {axis!r}; expected one of {_ABLATION_AXES}")
    count = config.count if count is None else count
    rows: list[dict] = []

    if axis == "length":
        for level in levels:
            sub = _subrun_config(config, f"length_{level}", bank_prefix=int(level))
            cmd_generate(sub, count)
            stories = load_backstories(sub.backstories_path)
            wd = _run_downstream(sub, roster, human_responses)
            rows.append(
                {
                    "level": int(level),
                    "n_backstories": len(stories),
                    "mean_words": round(_mean_words(stories), 3),
                    "artifact_sha256": file_sha256(sub.backstories_path),
                    "wd_democrat": wd["democrat"],
                    "wd_republican": wd["republican"],
                }
            )
    elif axis == "consistency":
        arms = [lv for lv in levels if lv in ("critic_on", "critic_off")] or [
            "critic_on", "critic_off"
        ]
        for label in arms:
            sub = _subrun_config(
                config, f"consistency_{label}", critic_enabled=(label == "critic_on")
            )
            stats = cmd_generate(sub, count)
            stories = load_backstories(sub.backstories_path)
            wd = _run_downstream(sub, roster, human_responses)
            rows.append(
                {
                    "level": label,
                    "n_backstories": len(stories),
                    "mean_words": round(_mean_words(stories), 3),
                    "rejections": sum(stats["rejections"].values()),
                    "artifact_sha256": file_sha256(sub.backstories_path),
                    "wd_democrat": wd["democrat"],
                    "wd_republican": wd["republican"],
                }
            )
    else:  # count
        manifest = Manifest(config.storage_root)
        gen_artifacts = manifest.verify_stage("generate", for_stage="ablate")
        ann_artifacts = manifest.verify_stage("annotate", for_stage="ablate")
        stories = load_backstories(gen_artifacts["backstories"])
        profiles = {p.backstory_id: p for p in load_profiles(ann_artifacts["profiles"])}
        pool_ids = sorted(profiles)
        for level in levels:
            level = int(level)
            if level > len(pool_ids):
                raise StageError(
                    "ablate", f"count level {level} exceeds annotated pool ({len(pool_ids)})"
                )
            rng = np.random.default_rng(derive_seed(config.seed, "ablate_count", level))
            chosen = sorted(rng.choice(pool_ids, size=level, replace=False).tolist())
            sub = _subrun_config(config, f"count_{level}")
            sub.storage_root.mkdir(parents=True, exist_ok=True)
            sub_records = [bs.backstory_to_record(stories[i]) for i in chosen]
            atomic_write_text(sub.backstories_path, _dump_jsonl(sub_records))
            profile_records = []
            for i in chosen:
                profile_records.extend(demo.profile_to_records(profiles[i]))
            atomic_write_text(sub.profiles_path, _dump_jsonl(profile_records))
            sub_manifest = Manifest(sub.storage_root)
            sub_manifest.record_stage(
                "generate", {"backstories": sub.backstories_path},
                config=sub,
                stats={"total": level, "subsampled_from": len(pool_ids)},
            )
            sub_manifest.record_stage(
                "annotate", {"profiles": sub.profiles_path},
                config=sub,
            )
            wd = {"democrat": None, "republican": None}
            if roster is not None:
                cmd_match(sub, roster)
                for study in sub.studies:
                    cmd_survey(sub, study)
                cmd_evaluate(sub, human_responses=human_responses)
                if human_responses is not None:
                    gaps = json.loads((sub.storage_root / "gaps.json").read_text())
                    for row in gaps:
                        if row["source"] == "model" and row["wd"] is not None:
                            wd[row["party"]] = row["wd"]
            rows.append(
                {
                    "level": level,
                    "subsample_ids": chosen,
                    "wd_democrat": wd["democrat"],
                    "wd_republican": wd["republican"],
                }
            )

    out_csv = config.storage_root / f"ablation_{axis}.csv"
    _write_ablation_csv(out_csv, rows)
    Manifest(config.storage_root).record_stage(
        f"ablate_{axis}", {"table": out_csv},
        config=config,
        stats={"levels": [r["level"] for r in rows]},
    )
    return rows


def _write_ablation_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        atomic_write_text(path, "")
        return
    columns = list(rows[0].keys())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(
            ["" if row.get(c) is None else json.dumps(row[c]) if isinstance(row[c], list)
             else row[c] for c in columns]
        )
    atomic_write_text(path, buf.getvalue())
