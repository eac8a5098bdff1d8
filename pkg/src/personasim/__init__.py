"""Virtual-persona survey simulation.

Builds interview-transcript backstories with critic-gated resampling,
annotates them with demographic trait distributions, matches them one-to-one
against human survey rosters, administers partisan-perception studies, and
scores how the resulting response distributions and perception gaps compare
with published human baselines.
"""

from .backstory import (
    Backstory,
    CritiqueVerdict,
    InterviewQuestion,
    InterviewTurn,
    RejectReason,
    RetryExhaustedError,
    ablation_bank,
    critique_answer,
    generate_backstory,
    load_question_bank,
    render_interview_prompt,
)
from .demographics import (
    PersonaProfile,
    TraitDistribution,
    TraitKind,
    annotate,
    extract_explicit,
    parse_choice,
    sample_trait_distribution,
)
from .llm import (
    CompletionRequest,
    CompletionResponse,
    HTTPBackend,
    StubBackend,
    StubRule,
    complete,
    option_distribution,
)
from .matching import (
    HumanRespondent,
    MatchResult,
    WeightMatrix,
    assign_cohort,
    build_weight_matrix,
    edge_weight,
    hungarian_match,
    load_roster,
)
from .metrics import (
    GapReport,
    OrdinalEncoding,
    cohens_d,
    default_encoding,
    hostility_gap,
    meta_perception_gap,
    respondent_score,
    subversion_gap,
    wasserstein_1d,
    welch_t,
    welch_test,
)
from .ngrams import NgramSpec, NgramTable, compare_corpora, containing_phrase, count_ngrams, top_k
from .surveys import (
    ConditioningMethod,
    Party,
    ResponseDistribution,
    Study,
    SurveyQuestion,
    administer,
    expert_reflection,
    load_study,
    render_condition,
    run_study,
)

__version__ = "0.1.0"
