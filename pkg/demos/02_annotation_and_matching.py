"""Annotate backstories with trait distributions, then match a human roster.

Stage 1 hunts for an explicit trait mention (one-hot on a hit); stage 2
samples the self-report questionnaire 40 times and keeps the empirical
distribution. Matching multiplies the per-trait probabilities of hitting
each human's exact options and solves the assignment problem on the result.
"""

from personasim import StubBackend, annotate
from personasim.backstory import Backstory, InterviewQuestion, InterviewTurn
from personasim.demographics import TraitKind
from personasim.matching import (
    HumanRespondent,
    assign_cohort,
    build_weight_matrix,
    edge_weight,
    party_feasibility,
)


def story(story_id, party_line):
    turns = (
        InterviewTurn(
            InterviewQuestion(1, "tell me the story of your life"),
            f"I settled near the coast after college. {party_line}",
        ),
    )
    text = "\n\n".join(f"Question: {t.question.text}\nAnswer: {t.answer}" for t in turns)
    return Backstory(story_id, turns, "stub", 0, len(text.split()))


stories = [
    story("p1", "I am a proud Democrat."),
    story("p2", "I am a proud Republican."),
    story("p3", "Politics never comes up at our table."),
]

backend = StubBackend(
    [
        ("I am a proud Democrat\\.[\\s\\S]*mention about political party",
         'Evidence: "I am a proud Democrat." Answer: (A)'),
        ("I am a proud Republican\\.[\\s\\S]*mention about political party",
         'Evidence: "I am a proud Republican." Answer: (B)'),
        ("mention about", "Was not mentioned"),
        ("What is your age", {"variants": ["(B) 25-34", "(C) 35-44"]}),
        ("What is your gender", {"variants": ["(A) Male", "(B) Female"]}),
        ("education you have completed", {"variants": ["(E) Bachelor's degree"]}),
        ("annual household income", {"variants": ["(F) $50,000 to $59,999"]}),
        ("racial or ethnic groups", {"variants": ["(G) White or European"]}),
        ("think of yourself as", {"variants": ["(A) Democrat", "(C) Independent"]}),
    ]
)

profiles = [
    annotate(s, extractor_backend=backend, sampler_backend=backend, n_samples=40)
    for s in stories
]
for profile in profiles:
    party = profile.distributions[TraitKind.party]
    kind = "one-hot (explicit)" if party.support_count == 0 else "sampled"
    print(f"{profile.backstory_id}: party {dict(party.probabilities)} [{kind}]")

humans = [
    HumanRespondent("h1", {
        TraitKind.age: "B", TraitKind.gender: "B", TraitKind.education: "E",
        TraitKind.income: "F", TraitKind.race_ethnicity: "G", TraitKind.party: "A",
    }),
    HumanRespondent("h2", {
        TraitKind.age: "C", TraitKind.gender: "A", TraitKind.education: "E",
        TraitKind.income: "F", TraitKind.race_ethnicity: "G", TraitKind.party: "B",
    }),
]

print("\nper-party feasibility:", party_feasibility(humans, profiles))
matrix = build_weight_matrix(humans, profiles)
print("weight matrix (rows humans, cols personas):")
for i, row in enumerate(matrix.weights):
    print(f"  {matrix.human_ids[i]}: " + "  ".join(f"{w:.4f}" for w in row))

cohort = assign_cohort(humans, profiles)
print("\nassignment:")
for human, profile, weight in cohort.pairs:
    print(f"  {human.id} ({human.party}) -> {profile.backstory_id} (weight {weight:.4f})")
print(f"total {cohort.total_weight:.4f}, min {cohort.min_weight:.4f}, "
      f"mean {cohort.mean_weight:.4f}")

# sanity: the matched weight is never beaten by swapping one pair greedily
for human in humans:
    best = max(edge_weight(human, p) for p in profiles)
    print(f"  best single edge for {human.id}: {best:.4f}")
