"""Published human baseline rows for the three studies.

These are the aggregate gap statistics reported for the original human
samples, stored verbatim so reports can print the human baseline next to
model rows. Per-option human response shares were never published, so
distribution-level comparisons additionally require a microdata file; these
constants cover only the gap, effect size, and t-statistic columns.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class HumanReferenceRow:
    study: str
    party: str
    delta: float
    cohens_d: float
    t_stat: float
    stars: str
    n_group_a: int  # ingroup / perceiver / actual-rater group
    n_group_b: int  # outgroup / target / meta-believer group


HUMAN_REFERENCE: dict[tuple[str, str], HumanReferenceRow] = {
    ("atp_w110", "democrat"): HumanReferenceRow(
        "atp_w110", "democrat", delta=1.630, cohens_d=2.208,
        t_stat=25.875, stars="***", n_group_a=1886, n_group_b=1551,
    ),
    ("atp_w110", "republican"): HumanReferenceRow(
        "atp_w110", "republican", delta=1.606, cohens_d=2.263,
        t_stat=26.514, stars="***", n_group_a=1551, n_group_b=1886,
    ),
    ("subversion", "democrat"): HumanReferenceRow(
        "subversion", "democrat", delta=0.445, cohens_d=1.887,
        t_stat=35.879, stars="***", n_group_a=813, n_group_b=723,
    ),
    ("subversion", "republican"): HumanReferenceRow(
        "subversion", "republican", delta=0.398, cohens_d=1.951,
        t_stat=39.329, stars="***", n_group_a=723, n_group_b=813,
    ),
    ("meta_prejudice", "democrat"): HumanReferenceRow(
        "meta_prejudice", "democrat", delta=1.091, cohens_d=0.761,
        t_stat=12.266, stars="***", n_group_a=520, n_group_b=533,
    ),
    ("meta_prejudice", "republican"): HumanReferenceRow(
        "meta_prejudice", "republican", delta=1.182, cohens_d=0.768,
        t_stat=12.4, stars="***", n_group_a=533, n_group_b=520,
    ),
}

# Recruitment totals for the original samples.
STUDY_SAMPLE_SIZES: dict[str, dict[str, int]] = {
    "atp_w110": {"total": 6174, "republican": 1551, "democrat": 1886,
                 "independent": 1885, "something_else": 777},
    "subversion": {"total": 1536, "republican": 723, "democrat": 813},
    "meta_prejudice": {"total": 1053, "democrat": 533, "republican": 520},
}


def human_reference_json() -> str:
    payload = {
        "rows": [asdict(row) for row in HUMAN_REFERENCE.values()],
        "sample_sizes": STUDY_SAMPLE_SIZES,
    }
    return json.dumps(payload, indent=2, sort_keys=True)
