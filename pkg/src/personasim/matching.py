"""One-to-one assignment of human respondents to virtual personas.

Every human carries a deterministic six-trait tuple; every persona carries a
probability distribution per trait. The edge weight between a human and a
persona is the product over the six traits of the probability that the
persona's trait equals the human's option, and a maximum-weight bipartite
matching over the complete graph assigns each human a distinct persona.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .demographics import TRAIT_OPTION_SETS, PersonaProfile, TraitKind

log = logging.getLogger(__name__)

TIE_TOL = 1e-9


class MatchingError(Exception):
    pass


@dataclass(frozen=True)
class HumanRespondent:
    id: str
    traits: Mapping[TraitKind, str]

    def __post_init__(self):
        for kind in TraitKind:
            letter = self.traits.get(kind)
            if letter is None:
                raise ValueError(f"respondent {self.id} missing trait {kind.value}")
            if letter not in TRAIT_OPTION_SETS[kind].letters:
                raise ValueError(
                    f"respondent {self.id}: {letter!r} is not a valid {kind.value} option"
                )

    @property
    def party(self) -> str:
        """democrat / republican / other, derived from the party trait."""
        letter = self.traits[TraitKind.party]
        return {"A": "democrat", "B": "republican"}.get(letter, "other")


@dataclass(frozen=True)
class WeightMatrix:
    human_ids: tuple[str, ...]
    persona_ids: tuple[str, ...]
    weights: np.ndarray  # shape (n humans, m personas)

    def __post_init__(self):
        n, m = self.weights.shape
        if (n, m) != (len(self.human_ids), len(self.persona_ids)):
            raise ValueError("weight matrix shape does not match id lists")
        if m < n:
            raise MatchingError(f"need at least as many personas ({m}) as humans ({n})")
        if np.any(self.weights < 0) or np.any(self.weights > 1 + TIE_TOL):
            raise ValueError("weights must lie in [0, 1]")


@dataclass(frozen=True)
class MatchResult:
    assignment: Mapping[str, str]  # human id -> persona id, injective
    total_weight: float
    pair_weights: Mapping[str, float]


@dataclass(frozen=True)
class CohortAssignment:
    pairs: tuple[tuple[HumanRespondent, PersonaProfile, float], ...]
    total_weight: float
    min_weight: float
    mean_weight: float


def edge_weight(human: HumanRespondent, profile: PersonaProfile) -> float:
    """Product over the six traits of P(persona trait = human's option).

    A refusal answer on the human side contributes a factor of 1: the trait
    is uninformative for that respondent rather than disqualifying every
    persona.
    """
    weight = 1.0
    for kind in TraitKind:
        letter = human.traits[kind]
        if letter in TRAIT_OPTION_SETS[kind].refusal_letters:
            continue
        dist = profile.distributions.get(kind)
        if dist is None:
            raise MatchingError(f"profile {profile.backstory_id} missing trait {kind.value}")
        weight *= dist.probability(letter)
    return weight


def build_weight_matrix(
    humans: Sequence[HumanRespondent], profiles: Sequence[PersonaProfile]
) -> WeightMatrix:
    n, m = len(humans), len(profiles)
    if m < n:
        raise MatchingError(f"persona pool ({m}) smaller than human roster ({n})")
    if m == n:
        log.warning(
            "persona pool size equals roster size (%d); a strictly larger pool "
            "gives the matcher room to choose", m
        )
    weights = np.empty((n, m), dtype=float)
    for i, human in enumerate(humans):
        for j, profile in enumerate(profiles):
            weights[i, j] = edge_weight(human, profile)
    return WeightMatrix(
        tuple(h.id for h in humans),
        tuple(p.backstory_id for p in profiles),
        weights,
    )


def _optimal_value(weights: np.ndarray) -> float:
    if weights.size == 0 or weights.shape[0] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return float(weights[rows, cols].sum())


def hungarian_match(matrix: WeightMatrix) -> MatchResult:
    """Maximum-weight assignment of every human to a distinct persona.

    Among all optimal assignments, returns the lexicographically smallest
    one over (human index ascending, persona index ascending), so repeated
    runs and column permutations behave predictably. The refinement fixes
    one row at a time: for each human in order it takes the smallest persona
    index whose forced choice still admits an optimal completion. Candidate
    columns are pruned with a per-row-maxima upper bound before paying for
    an exact solve. Ties are recognized within a 1e-9 absolute tolerance.
    """
    w = matrix.weights
    n, m = w.shape
    chosen: list[int] = []
    available = list(range(m))
    remaining_best = _optimal_value(w)
    for i in range(n):
        rest = w[np.ix_(range(i + 1, n), available)] if i + 1 < n else None
        if rest is not None and rest.size:
            best = rest.max(axis=1)
            best_col = rest.argmax(axis=1)
            masked = rest.copy()
            masked[np.arange(rest.shape[0]), best_col] = -np.inf
            second = masked.max(axis=1)
            base_bound = float(best.sum())
        picked = None
        for local_j, j in enumerate(available):
            if rest is not None and rest.size:
                hit = best_col == local_j  # rows whose best column is j itself
                bound = base_bound - float(best[hit].sum()) + float(second[hit].sum())
            else:
                bound = 0.0
            if w[i, j] + bound < remaining_best - TIE_TOL:
                continue  # cannot reach the optimum even ignoring injectivity
            rest_cols = [c for c in available if c != j]
            if i + 1 < n:
                rest_best = _optimal_value(w[np.ix_(range(i + 1, n), rest_cols)])
            else:
                rest_best = 0.0
            if math.isclose(w[i, j] + rest_best, remaining_best, rel_tol=0.0, abs_tol=TIE_TOL):
                picked = j
                remaining_best = rest_best
                break
        if picked is None:  # numeric safety net; cannot happen for valid matrices
            raise MatchingError(f"no optimal completion found at human index {i}")
        chosen.append(picked)
        available.remove(picked)
    pair_weights = {
        matrix.human_ids[i]: float(w[i, j]) for i, j in enumerate(chosen)
    }
    assignment = {
        matrix.human_ids[i]: matrix.persona_ids[j] for i, j in enumerate(chosen)
    }
    return MatchResult(assignment, float(sum(pair_weights.values())), pair_weights)


def assign_cohort(
    humans: Sequence[HumanRespondent], profiles: Sequence[PersonaProfile]
) -> CohortAssignment:
    """Match the roster against the persona pool and report audit statistics."""
    matrix = build_weight_matrix(humans, profiles)
    result = hungarian_match(matrix)
    by_id = {p.backstory_id: p for p in profiles}
    pairs = tuple(
        (human, by_id[result.assignment[human.id]], result.pair_weights[human.id])
        for human in humans
    )
    weights = [w for _, _, w in pairs]
    min_w = min(weights) if weights else 0.0
    mean_w = sum(weights) / len(weights) if weights else 0.0
    if weights and max(weights) == 0.0:
        log.warning("every matched pair has weight 0; the pool shares no trait mass "
                    "with the roster")
    log.info(
        "matched %d humans to %d-persona pool: total=%.6f min=%.6f mean=%.6f",
        len(humans), len(profiles), result.total_weight, min_w, mean_w,
    )
    return CohortAssignment(pairs, result.total_weight, min_w, mean_w)


def party_feasibility(
    humans: Sequence[HumanRespondent], profiles: Sequence[PersonaProfile]
) -> dict[str, dict[str, int]]:
    """Per-party counts of roster humans vs personas with positive party mass."""
    report: dict[str, dict[str, int]] = {}
    for party, letter in (("democrat", "A"), ("republican", "B")):
        n_humans = sum(1 for h in humans if h.party == party)
        n_personas = sum(
            1
            for p in profiles
            if p.distributions[TraitKind.party].probability(letter) > 0
        )
        report[party] = {"humans": n_humans, "personas_with_mass": n_personas}
    return report


# ---------------------------------------------------------------------------
# roster and match-output files

_ROSTER_COLUMNS = ("id", "age", "gender", "education", "income", "race_ethnicity", "party")


def _resolve_option(kind: TraitKind, value: str) -> str:
    """Accept either an option letter or a full label (case-insensitive)."""
    value = value.strip()
    option_set = TRAIT_OPTION_SETS[kind]
    if value.upper() in option_set.letters and len(value) == 1:
        return value.upper()
    for letter, label in option_set.options:
        if value.casefold() == label.casefold():
            return letter
    raise MatchingError(f"unrecognized {kind.value} value {value!r} in roster")


def load_roster(path: str | Path) -> list[HumanRespondent]:
    """Read the human roster CSV (header: id,age,gender,education,income,
    race_ethnicity,party; trait cells hold option letters or labels)."""
    humans = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _ROSTER_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MatchingError(f"roster {path} missing columns: {missing}")
        for row in reader:
            traits = {
                TraitKind.age: _resolve_option(TraitKind.age, row["age"]),
                TraitKind.gender: _resolve_option(TraitKind.gender, row["gender"]),
                TraitKind.education: _resolve_option(TraitKind.education, row["education"]),
                TraitKind.income: _resolve_option(TraitKind.income, row["income"]),
                TraitKind.race_ethnicity: _resolve_option(
                    TraitKind.race_ethnicity, row["race_ethnicity"]
                ),
                TraitKind.party: _resolve_option(TraitKind.party, row["party"]),
            }
            humans.append(HumanRespondent(row["id"], traits))
    if not humans:
        raise MatchingError(f"roster {path} has no rows")
    return humans


def write_match_csv(path: str | Path, cohort: CohortAssignment) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "backstory_id", "weight"])
        for human, profile, weight in cohort.pairs:
            writer.writerow([human.id, profile.backstory_id, repr(weight)])


def read_match_csv(path: str | Path) -> list[tuple[str, str, float]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append((row["id"], row["backstory_id"], float(row["weight"])))
    return rows
