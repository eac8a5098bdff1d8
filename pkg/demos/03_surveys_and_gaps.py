"""Administer the three partisan-perception studies and score the gaps.

Shows the three question banks, token-score measurement of one response
distribution, a full routed study run, and the gap statistics (delta,
Cohen's d, Welch t, Wasserstein distance) rendered next to the published
human baselines.
"""

from personasim import StubBackend
from personasim.backstory import Backstory, InterviewQuestion, InterviewTurn
from personasim.demographics import TraitKind
from personasim.matching import HumanRespondent
from personasim.metrics import (
    build_report,
    compute_gaps,
    default_encoding,
    render_report_text,
    score_table,
    wasserstein_1d,
)
from personasim.surveys import Study, SurveyRespondent, administer, load_study, run_study

for study in Study:
    bank = load_study(study)
    print(f"{study.value}: {len(bank)} questions, "
          f"{len(bank[0].options)}-point scale, e.g. {bank[0].text[:60]}...")

# one cell: a Democrat-conditioned persona rating Democrats
question = load_study(Study.atp_w110)[0]
backend = StubBackend(
    [
        ("proud Democrat[\\s\\S]*say Democrats are",
         {"token_scores": {"A": 0.22, "B": 0.34, "C": 0.28, "D": 0.11, "E": 0.05}}),
        ("proud Democrat[\\s\\S]*say Republicans are",
         {"token_scores": {"A": 0.04, "B": 0.09, "C": 0.27, "D": 0.33, "E": 0.27}}),
        ("proud Republican[\\s\\S]*say Republicans are",
         {"token_scores": {"A": 0.20, "B": 0.35, "C": 0.30, "D": 0.10, "E": 0.05}}),
        ("proud Republican[\\s\\S]*say Democrats are",
         {"token_scores": {"A": 0.05, "B": 0.08, "C": 0.25, "D": 0.34, "E": 0.28}}),
    ]
)
dist = administer(question, "I am a proud Democrat.", backend, "token_scores")
print("\none measured distribution:", {k: round(v, 2) for k, v in dist.probabilities.items()})

# a small cohort: three matched respondents per party
def tiny_story(sid, line):
    turn = InterviewTurn(InterviewQuestion(1, "your life story"), line)
    text = f"Question: {turn.question.text}\nAnswer: {turn.answer}"
    return Backstory(sid, (turn,), "stub", 0, len(text.split()))


def tiny_human(hid, party):
    return HumanRespondent(hid, {
        TraitKind.age: "B", TraitKind.gender: "A", TraitKind.education: "E",
        TraitKind.income: "F", TraitKind.race_ethnicity: "G", TraitKind.party: party,
    })


respondents = []
for i in range(3):
    respondents.append(SurveyRespondent(
        f"d{i}", "democrat", tiny_human(f"d{i}", "A"),
        tiny_story(f"pd{i}", "I am a proud Democrat."),
    ))
    respondents.append(SurveyRespondent(
        f"r{i}", "republican", tiny_human(f"r{i}", "B"),
        tiny_story(f"pr{i}", "I am a proud Republican."),
    ))

run = run_study(Study.atp_w110, respondents, backend, mode="token_scores")
print(f"\nstudy run: {len(run.distributions)} cells, {len(run.failures)} failures")

scores = score_table(run, score_mode="sampled", seed=7)
gaps = compute_gaps(Study.atp_w110, scores, run.parties)
report = build_report(Study.atp_w110, gaps)
print("\n" + render_report_text([report]))

# a standalone distance: the two partisan views of Democrats
positions = default_encoding(Study.atp_w110).for_question(question.id)
p = [0.22, 0.34, 0.28, 0.11, 0.05]
q = [0.05, 0.08, 0.25, 0.34, 0.28]
print(f"wasserstein (unit span) between the two conditioned views: "
      f"{wasserstein_1d(p, q, positions):.4f}")
