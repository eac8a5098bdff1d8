"""Perception gaps, effect sizes, distributional distances, and reports.

The three gap statistics are all differences of per-respondent mean scores
between two groups, each paired with Cohen's d (pooled-SD effect size), a
Welch t-statistic, and optionally a 1-D Wasserstein distance between
cohort-level response distributions when a human distribution is available.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .reference import HUMAN_REFERENCE, HumanReferenceRow
from .surveys import Party, Perspective, Study, StudyRun, SurveyQuestion, load_study, other_party
from .util import derive_seed

log = logging.getLogger(__name__)

WD_TOL = 1e-9


class MetricsError(Exception):
    pass


class DegenerateVarianceError(MetricsError):
    pass


# ---------------------------------------------------------------------------
# ordinal encodings

# Numeric positions per option letter, in letter order. The trait-evaluation
# scale runs positive-pole-first (+2 favorable .. -2 unfavorable); the
# subversion scale counts willingness 1..4 (Never..Definitely); the warmth
# scale counts 1..5 (Very cold..Very warm).
DEFAULT_STUDY_POSITIONS: dict[Study, tuple[float, ...]] = {
    Study.atp_w110: (2.0, 1.0, 0.0, -1.0, -2.0),
    Study.subversion: (1.0, 2.0, 3.0, 4.0),
    Study.meta_prejudice: (1.0, 2.0, 3.0, 4.0, 5.0),
}


@dataclass(frozen=True)
class OrdinalEncoding:
    """Positions per option letter for every question of the studies."""

    positions: Mapping[str, tuple[float, ...]]  # question id -> positions

    def __post_init__(self):
        for qid, pos in self.positions.items():
            diffs = [b - a for a, b in zip(pos, pos[1:])]
            if not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
                raise ValueError(f"positions for {qid} must be strictly monotone")

    def for_question(self, question_id: str) -> tuple[float, ...]:
        try:
            return self.positions[question_id]
        except KeyError:
            raise MetricsError(f"no encoding for question {question_id}") from None


def default_encoding(
    study: Study | str, overrides: Mapping[str, Sequence[float]] | None = None
) -> OrdinalEncoding:
    study = Study(study)
    positions = {
        q.id: tuple(DEFAULT_STUDY_POSITIONS[study]) for q in load_study(study)
    }
    for qid, pos in (overrides or {}).items():
        positions[qid] = tuple(float(x) for x in pos)
    return OrdinalEncoding(positions)


# ---------------------------------------------------------------------------
# per-respondent scores

def respondent_score(
    probabilities: Mapping[str, float],
    letters: Sequence[str],
    positions: Sequence[float],
    score_mode: str = "expected",
    seed: int | None = None,
) -> float:
    """Collapse one response distribution to a single score.

    expected: probability-weighted mean position. sampled: one seeded draw.
    argmax: position of the modal option, ties to the earlier letter.
    """
    if len(letters) != len(positions):
        raise MetricsError("encoding does not cover the question's options")
    probs = np.array([probabilities.get(l, 0.0) for l in letters], dtype=float)
    pos = np.array(positions, dtype=float)
    if score_mode == "expected":
        return float(np.dot(probs, pos))
    if score_mode == "sampled":
        rng = np.random.default_rng(0 if seed is None else seed)
        idx = rng.choice(len(pos), p=probs / probs.sum())
        return float(pos[idx])
    if score_mode == "argmax":
        return float(pos[int(np.argmax(probs))])
    raise MetricsError(f"unknown score mode: {score_mode}")


# ---------------------------------------------------------------------------
# distances and statistics

def wasserstein_1d(
    p: Sequence[float],
    q: Sequence[float],
    positions: Sequence[float],
    *,
    normalize: bool = True,
) -> float:
    """1-D Wasserstein distance between categorical distributions on an
    ordered support: sum over cut points of |CDF_p - CDF_q| times the gap
    between adjacent positions. Positions are rescaled to unit span by
    default so reported distances are comparable across option counts.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    x = np.asarray(positions, dtype=float)
    if not (p.shape == q.shape == x.shape):
        raise MetricsError("p, q, and positions must share one support")
    if x.size >= 2 and x[0] > x[-1]:  # descending encodings flip to ascending
        p, q, x = p[::-1], q[::-1], x[::-1]
    if x.size < 2:
        return 0.0
    span = x[-1] - x[0]
    if normalize and span > 0:
        x = (x - x[0]) / span
    cdf_gap = np.abs(np.cumsum(p - q))[:-1]
    return float(np.sum(cdf_gap * np.diff(x)))


def cohens_d(group_a: Sequence[float], group_b: Sequence[float]) -> float:
    """Mean difference divided by the pooled standard deviation."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise MetricsError("each group needs at least 2 scores")
    diff = a.mean() - b.mean()
    pooled_var = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (
        a.size + b.size - 2
    )
    if pooled_var == 0.0:
        if diff == 0.0:
            return 0.0
        raise DegenerateVarianceError("zero pooled SD with unequal means")
    return float(diff / math.sqrt(pooled_var))


@dataclass(frozen=True)
class WelchResult:
    t_stat: float
    df: float
    p_value: float
    stars: str


def significance_stars(p_value: float) -> str:
    if p_value < 0.001:
        return "***"
    if p_value < 0.01:
        return "**"
    if p_value < 0.05:
        return "*"
    return ""


def welch_test(group_a: Sequence[float], group_b: Sequence[float]) -> WelchResult:
    """Welch's unequal-variance t-test with Welch-Satterthwaite df."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise MetricsError("each group needs at least 2 scores")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    sa, sb = va / a.size, vb / b.size
    denom = math.sqrt(sa + sb)
    if denom == 0.0:
        raise DegenerateVarianceError("both groups have zero variance")
    t = float((a.mean() - b.mean()) / denom)
    df = (sa + sb) ** 2 / (
        (sa**2 / (a.size - 1) if sa else 0.0) + (sb**2 / (b.size - 1) if sb else 0.0)
    )
    p = float(2.0 * scipy_stats.t.sf(abs(t), df))
    return WelchResult(t, float(df), p, significance_stars(p))


def welch_t(group_a: Sequence[float], group_b: Sequence[float]) -> float:
    return welch_test(group_a, group_b).t_stat


# ---------------------------------------------------------------------------
# gap reports

@dataclass(frozen=True)
class GapReport:
    study: str
    party: str
    delta: float
    cohens_d: float | None
    wd: float | None
    t_stat: float | None
    stars: str
    n_per_group: tuple[int, int]


ScoreTable = Mapping[tuple[str, str], float]  # (respondent id, question id) -> score


def score_table(
    run: StudyRun,
    encoding: OrdinalEncoding | None = None,
    *,
    score_mode: str = "expected",
    seed: int = 0,
) -> dict[tuple[str, str], float]:
    """Per-(respondent, question) scores for a study run."""
    encoding = encoding or default_encoding(run.study)
    questions = {q.id: q for q in load_study(run.study)}
    scores = {}
    for (rid, qid), dist in run.distributions.items():
        question = questions[qid]
        scores[(rid, qid)] = respondent_score(
            dist.probabilities,
            question.letters,
            encoding.for_question(qid),
            score_mode,
            seed=derive_seed(seed, rid, qid),
        )
    return scores


def _per_respondent_means(
    scores: ScoreTable, parties: Mapping[str, str], question_ids: Sequence[str], party: str
) -> list[float]:
    """Mean score per respondent of the given party across the listed
    questions; respondents missing any listed question are skipped."""
    means = []
    for rid, rid_party in sorted(parties.items()):
        if rid_party != party:
            continue
        values = [scores[(rid, qid)] for qid in question_ids if (rid, qid) in scores]
        if len(values) == len(question_ids) and values:
            means.append(sum(values) / len(values))
    return means


def _gap_from_groups(
    study: Study, party: str, group_a: list[float], group_b: list[float]
) -> GapReport:
    if not group_a or not group_b:
        raise MetricsError(
            f"{study.value}/{party}: a respondent group is empty "
            f"(sizes {len(group_a)}/{len(group_b)})"
        )
    delta = float(np.mean(group_a) - np.mean(group_b))
    d = t = None
    stars = ""
    if len(group_a) >= 2 and len(group_b) >= 2:
        try:
            d = cohens_d(group_a, group_b)
        except DegenerateVarianceError:
            d = None
        try:
            result = welch_test(group_a, group_b)
            t, stars = result.t_stat, result.stars
        except DegenerateVarianceError:
            t = None
    return GapReport(
        study.value, party, delta, d, None, t, stars, (len(group_a), len(group_b))
    )


def hostility_gap(
    scores: ScoreTable,
    parties: Mapping[str, str],
    target_party: Party | str,
) -> GapReport:
    """Ingroup-versus-outgroup trait evaluation gap for one target party.

    Respondents of the target party (ingroup) and of the opposing party
    (outgroup) each get a per-respondent mean over the five trait items
    targeting that party; the gap is ingroup mean minus outgroup mean.
    """
    target = Party(target_party)
    question_ids = [
        q.id for q in load_study(Study.atp_w110) if q.target_party == target
    ]
    ingroup = _per_respondent_means(scores, parties, question_ids, target.value)
    outgroup = _per_respondent_means(
        scores, parties, question_ids, other_party(target).value
    )
    return _gap_from_groups(Study.atp_w110, target.value, ingroup, outgroup)


def subversion_gap(
    scores: ScoreTable,
    parties: Mapping[str, str],
    perceiving_party: Party | str,
) -> GapReport:
    """Perceived-minus-actual willingness to subvert democratic norms.

    The perceiving party's mean over the six would-MOST-of-them items,
    minus the target party's own mean over the six would-YOU items.
    """
    perceiver = Party(perceiving_party)
    target = other_party(perceiver)
    questions = load_study(Study.subversion)
    meta_ids = [
        q.id
        for q in questions
        if q.perspective == Perspective.ingroup_meta
        and q.target_party == target
        and q.asked_to == f"{perceiver.value}s"
    ]
    self_ids = [
        q.id
        for q in questions
        if q.perspective == Perspective.self_action
        and q.target_party == target
        and q.asked_to == f"{target.value}s"
    ]
    perceiver_means = _per_respondent_means(scores, parties, meta_ids, perceiver.value)
    target_means = _per_respondent_means(scores, parties, self_ids, target.value)
    return _gap_from_groups(Study.subversion, perceiver.value, perceiver_means, target_means)


def meta_perception_gap(
    scores: ScoreTable,
    parties: Mapping[str, str],
    rated_party: Party | str,
) -> GapReport:
    """Actual cross-party warmth minus what the rated party believes it is.

    For rated party P: the opposing party's actual warmth ratings of P,
    minus P's beliefs about how the opposing party feels towards P.
    Positive values mean believed ratings are more hostile than actual
    ratings (exaggerated meta-perception).
    """
    rated = Party(rated_party)
    rater = other_party(rated)
    questions = load_study(Study.meta_prejudice)
    actual_ids = [
        q.id
        for q in questions
        if q.perspective == Perspective.self_opinion and q.target_party == rated
    ]
    believed_ids = [
        q.id
        for q in questions
        if q.perspective == Perspective.meta_perception
        and q.target_party == rated
        and q.asked_to == f"{rated.value}s"
    ]
    actual = _per_respondent_means(scores, parties, actual_ids, rater.value)
    believed = _per_respondent_means(scores, parties, believed_ids, rated.value)
    return _gap_from_groups(Study.meta_prejudice, rated.value, actual, believed)


def compute_gaps(study: Study | str, scores: ScoreTable, parties: Mapping[str, str]) -> list[GapReport]:
    study = Study(study)
    gap_fn = {
        Study.atp_w110: hostility_gap,
        Study.subversion: subversion_gap,
        Study.meta_prejudice: meta_perception_gap,
    }[study]
    return [gap_fn(scores, parties, party) for party in (Party.democrat, Party.republican)]


# ---------------------------------------------------------------------------
# distribution-level comparison

def mixture_distribution(
    run: StudyRun, question: SurveyQuestion, party: str
) -> dict[str, float] | None:
    """Uniform mixture of the per-respondent distributions of one party for
    one question, or None when no respondent of that party answered it."""
    members = [
        run.distributions[key]
        for key in sorted(run.distributions)
        if key[1] == question.id and run.parties.get(key[0]) == party
    ]
    if not members:
        return None
    probs = {l: 0.0 for l in question.letters}
    for dist in members:
        for letter in question.letters:
            probs[letter] += dist.probability(letter) / len(members)
    return probs


def study_wd(
    run: StudyRun,
    human_shares: Mapping[tuple[str, str], Mapping[str, float]],
    party: str,
    encoding: OrdinalEncoding | None = None,
) -> float | None:
    """Mean per-question Wasserstein distance between the cohort mixture and
    human response shares for one party. human_shares maps (question id,
    party) to a per-letter share mapping. None when nothing is comparable."""
    encoding = encoding or default_encoding(run.study)
    distances = []
    for question in load_study(run.study):
        if not question.asked_to_party(party):
            continue
        human = human_shares.get((question.id, party))
        model = mixture_distribution(run, question, party)
        if human is None or model is None:
            continue
        positions = encoding.for_question(question.id)
        p = [model.get(l, 0.0) for l in question.letters]
        q = [human.get(l, 0.0) for l in question.letters]
        distances.append(wasserstein_1d(p, q, positions))
    if not distances:
        return None
    return float(np.mean(distances))


def human_shares_from_microdata(
    responses: Sequence[tuple[str, str, str]],
    parties: Mapping[str, str],
    study: Study | str,
) -> dict[tuple[str, str], dict[str, float]]:
    """Empirical per-(question, party) option shares from human microdata
    rows (respondent id, question id, option letter)."""
    questions = {q.id: q for q in load_study(study)}
    counts: dict[tuple[str, str], dict[str, int]] = {}
    for rid, qid, letter in responses:
        if qid not in questions:
            continue
        party = parties.get(rid)
        if party is None:
            continue
        cell = counts.setdefault((qid, party), {})
        cell[letter] = cell.get(letter, 0) + 1
    shares: dict[tuple[str, str], dict[str, float]] = {}
    for key, cell in counts.items():
        total = sum(cell.values())
        shares[key] = {l: c / total for l, c in cell.items()}
    return shares


# ---------------------------------------------------------------------------
# report rendering

_MISSING = "-"


@dataclass(frozen=True)
class ReportRow:
    study: str
    party: str
    source: str  # "human" | "model"
    delta: float | None
    cohens_d: float | None
    wd: float | None
    t_stat: float | None
    stars: str
    n_per_group: tuple[int, int] | None


@dataclass
class StudyReport:
    rows: list[ReportRow]
    complete: bool


def build_report(
    study: Study | str,
    model_gaps: Sequence[GapReport] | None,
    *,
    wd_by_party: Mapping[str, float | None] | None = None,
) -> StudyReport:
    """Assemble human baseline rows plus model rows for one study."""
    study = Study(study)
    rows: list[ReportRow] = []
    complete = True
    for party in (Party.democrat, Party.republican):
        ref: HumanReferenceRow = HUMAN_REFERENCE[(study.value, party.value)]
        rows.append(
            ReportRow(
                study.value, party.value, "human", ref.delta, ref.cohens_d, None,
                ref.t_stat, ref.stars, (ref.n_group_a, ref.n_group_b),
            )
        )
    gap_by_party = {g.party: g for g in (model_gaps or [])}
    for party in (Party.democrat, Party.republican):
        gap = gap_by_party.get(party.value)
        wd = (wd_by_party or {}).get(party.value)
        if gap is None:
            complete = False
            rows.append(
                ReportRow(study.value, party.value, "model", None, None, wd, None, "", None)
            )
        else:
            rows.append(
                ReportRow(
                    study.value, party.value, "model", gap.delta, gap.cohens_d, wd,
                    gap.t_stat, gap.stars, gap.n_per_group,
                )
            )
    return StudyReport(rows, complete)


def _fmt(value: float | None, width: int = 8) -> str:
    if value is None:
        return _MISSING.rjust(width)
    return f"{value:.3f}".rjust(width)


def render_report_text(reports: Sequence[StudyReport]) -> str:
    lines = []
    header = (
        f"{'study':<15}{'party':<12}{'source':<8}"
        f"{'delta':>8}{'cohens_d':>10}{'wd':>8}{'t_stat':>9} {'sig':<4}{'n':>12}"
    )
    for report in reports:
        lines.append(header)
        lines.append("-" * len(header))
        for row in report.rows:
            n_text = (
                f"{row.n_per_group[0]}/{row.n_per_group[1]}" if row.n_per_group else _MISSING
            )
            lines.append(
                f"{row.study:<15}{row.party:<12}{row.source:<8}"
                f"{_fmt(row.delta)}{_fmt(row.cohens_d, 10)}{_fmt(row.wd)}"
                f"{_fmt(row.t_stat, 9)} {row.stars:<4}{n_text:>12}"
            )
        lines.append("")
    return "\n".join(lines)


def render_report_csv(reports: Sequence[StudyReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["study", "party", "source", "delta", "cohens_d", "wd", "t", "stars", "n_a", "n_b"]
    )
    for report in reports:
        for row in report.rows:
            writer.writerow(
                [
                    row.study,
                    row.party,
                    row.source,
                    "" if row.delta is None else f"{row.delta:.6f}",
                    "" if row.cohens_d is None else f"{row.cohens_d:.6f}",
                    "" if row.wd is None else f"{row.wd:.6f}",
                    "" if row.t_stat is None else f"{row.t_stat:.6f}",
                    row.stars,
                    row.n_per_group[0] if row.n_per_group else "",
                    row.n_per_group[1] if row.n_per_group else "",
                ]
            )
    return buf.getvalue()
