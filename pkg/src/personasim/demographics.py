"""Two-stage demographic and ideological annotation of backstories.

Stage 1 looks for an explicit verbalization of a trait in the transcript
(deterministic extractor at temperature 0); an explicit hit becomes a
one-hot distribution. Otherwise stage 2 samples the trait's multiple-choice
question many times at temperature 1.0 and builds the empirical distribution
over parsed, non-refusal options.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .backstory import Backstory
from .llm import Backend, CompletionRequest, complete
from .util import derive_seed, normalize_ws

log = logging.getLogger(__name__)

PROB_TOL = 1e-9


class TraitKind(str, Enum):
    age = "age"
    gender = "gender"
    education = "education"
    income = "income"
    race_ethnicity = "race_ethnicity"
    party = "party"


@dataclass(frozen=True)
class TraitOptionSet:
    kind: TraitKind
    options: tuple[tuple[str, str], ...]  # (letter, label), refusal options included
    refusal_letters: frozenset[str]

    def __post_init__(self):
        letters = [l for l, _ in self.options]
        if len(set(letters)) != len(letters):
            raise ValueError("option letters must be unique")
        if not self.refusal_letters <= set(letters):
            raise ValueError("refusal letters must be a subset of option letters")

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.options)

    @property
    def substantive_letters(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.options if l not in self.refusal_letters)

    def label(self, letter: str) -> str:
        for l, lab in self.options:
            if l == letter:
                return lab
        raise KeyError(letter)


def _optset(kind, pairs, refusal):
    return TraitOptionSet(kind, tuple(pairs), frozenset(refusal))


TRAIT_OPTION_SETS: dict[TraitKind, TraitOptionSet] = {
    TraitKind.age: _optset(
        TraitKind.age,
        [("A", "18-24"), ("B", "25-34"), ("C", "35-44"), ("D", "45-54"),
         ("E", "55-64"), ("F", "65+"), ("G", "Prefer not to answer")],
        {"G"},
    ),
    TraitKind.gender: _optset(
        TraitKind.gender,
        [("A", "Male"), ("B", "Female"), ("C", "Other (e.g., non-binary, trans)"),
         ("D", "Prefer not to answer")],
        {"D"},
    ),
    TraitKind.education: _optset(
        TraitKind.education,
        [("A", "Less than high school"),
         ("B", "High school graduate or equivalent (e.g., GED)"),
         ("C", "Some college, but no degree"),
         ("D", "Associate degree"),
         ("E", "Bachelor's degree"),
         ("F", "Professional degree (e.g., JD, MD)"),
         ("G", "Master's degree"),
         ("H", "Doctoral degree"),
         ("I", "Prefer not to answer")],
        {"I"},
    ),
    TraitKind.income: _optset(
        TraitKind.income,
        [("A", "Less than $10,000"), ("B", "$10,000 to $19,999"),
         ("C", "$20,000 to $29,999"), ("D", "$30,000 to $39,999"),
         ("E", "$40,000 to $49,999"), ("F", "$50,000 to $59,999"),
         ("G", "$60,000 to $69,999"), ("H", "$70,000 to $79,999"),
         ("I", "$80,000 to $89,999"), ("J", "$90,000 to $99,999"),
         ("K", "$100,000 to $149,999"), ("L", "$150,000 to $199,999"),
         ("M", "$200,000 or more"), ("N", "Prefer not to answer")],
        {"N"},
    ),
    TraitKind.race_ethnicity: _optset(
        TraitKind.race_ethnicity,
        [("A", "American Indian or Alaska Native"),
         ("B", "Asian or Asian American"),
         ("C", "Black or African American"),
         ("D", "Hispanic or Latino/a"),
         ("E", "Middle Eastern or North African"),
         ("F", "Native Hawaiian or Other Pacific Islander"),
         ("G", "White or European"),
         ("H", "Other"),
         ("I", "Prefer not to answer")],
        {"I"},
    ),
    TraitKind.party: _optset(
        TraitKind.party,
        [("A", "Democrat"), ("B", "Republican"), ("C", "Independent"),
         ("D", "Other"), ("E", "No preference")],
        {"E"},
    ),
}

# Evidence-seeking prompts, one per trait. Each is appended to the serialized
# transcript after a blank line; the extractor runs at temperature 0. The
# final "answer with ..." letter lists are kept exactly as administered,
# including the age prompt's omission of (F).
STAGE1_PROMPTS: dict[TraitKind, str] = {
    TraitKind.age: (
        "Question: What does the person's essay above mention about the age of the person?\n"
        "(A) 18-24\n(B) 25-34\n(C) 35-44\n(D) 45-54\n(E) 55-64\n(F) 65+\n"
        "(G) Was not mentioned\n"
        "First, provide evidence that is mentioned in the text. If the age was not "
        "mentioned, select 'Was not mentioned'. Next, answer with (A), (B), (C), (D), (E), (G).\n"
        "Answer:"
    ),
    TraitKind.gender: (
        "Question: What does the person's essay above mention about the gender of the person?\n"
        "(A) Male\n(B) Female\n(C) Other (e.g., non-binary, trans)\n(D) Was not mentioned\n"
        "First, provide evidence that is mentioned in the text. If the gender was not "
        "mentioned, select 'Was not mentioned'. Next, answer with (A), (B), (C), (D).\n"
        "Answer:"
    ),
    TraitKind.education: (
        "Question: What does the person's essay above mention about the highest level of "
        "education the person has completed?\n"
        "(A) Less than high school\n(B) High school graduate or equivalent (e.g., GED)\n"
        "(C) Some college, but no degree\n(D) Associate degree\n(E) Bachelor's degree\n"
        "(F) Professional degree (e.g., JD, MD)\n(G) Master's degree\n(H) Doctoral degree\n"
        "(I) Was not mentioned\n"
        "First, provide evidence that is mentioned in the text. If the highest level of "
        "education was not mentioned, select 'Was not mentioned'. Next, answer with (A), "
        "(B), (C), (D), (E), (F), (G), (H), (I).\n"
        "Answer:"
    ),
    TraitKind.income: (
        "Question: What does the person's essay above mention about the annual household "
        "income the person makes?\n"
        "(A) Less than $10,000\n(B) $10,000 to $19,999\n(C) $20,000 to $29,999\n"
        "(D) $30,000 to $39,999\n(E) $40,000 to $49,999\n(F) $50,000 to $59,999\n"
        "(G) $60,000 to $69,999\n(H) $70,000 to $79,999\n(I) $80,000 to $89,999\n"
        "(J) $90,000 to $99,999\n(K) $100,000 to $149,999\n(L) $150,000 to $199,999\n"
        "(M) $200,000 or more\n(N) Was not mentioned\n"
        "First, provide evidence that is mentioned in the text. If the annual household "
        "income was not mentioned, select 'Was not mentioned'. Next, answer with (A), (B), "
        "(C), (D), (E), (F), (G), (H), (I), (J), (K), (L), (M), (N).\n"
        "Answer:"
    ),
    TraitKind.race_ethnicity: (
        "Question: What does the person's essay above mention about racial or ethnic "
        "groups the person identifies with?\n"
        "(A) American Indian or Alaska Native\n(B) Asian or Asian American\n"
        "(C) Black or African American\n(D) Hispanic or Latino/a\n"
        "(E) Middle Eastern or North African\n(F) Native Hawaiian or Other Pacific Islander\n"
        "(G) White or European\n(H) Other\n(I) Was not mentioned\n"
        "First, provide evidence that is mentioned in the text. If the racial or ethnic "
        "groups was not mentioned, select 'Was not mentioned'. Next, answer with (A), (B), "
        "(C), (D), (E), (F), (G), (H), (I).\n"
        "Answer:"
    ),
    TraitKind.party: (
        "Question: What does the person's essay above mention about political party the "
        "person identifies with?\n"
        "(A) Democrat\n(B) Republican\n(C) Independent\n(D) Other\n(E) Was not mentioned\n"
        "First, provide evidence that is mentioned in the text. If the affiliation of the "
        "political party was not mentioned, select 'Was not mentioned'. Next, answer with "
        "(A), (B), (C), (D), (E).\n"
        "Answer:"
    ),
}

# Self-report questionnaires for stage-2 sampling, appended to the transcript
# after a blank line.
STAGE2_QUESTIONS: dict[TraitKind, str] = {
    TraitKind.age: (
        "Question: What is your age?\n"
        "(A) 18-24\n(B) 25-34\n(C) 35-44\n(D) 45-54\n(E) 55-64\n(F) 65+\n"
        "(G) Prefer not to answer\n\nAnswer:"
    ),
    TraitKind.gender: (
        "Question: What is your gender?\n"
        "(A) Male\n(B) Female\n(C) Other (e.g., non-binary, trans)\n"
        "(D) Prefer not to answer\n\nAnswer:"
    ),
    TraitKind.education: (
        "Question: What is the highest level of education you have completed?\n"
        "(A) Less than high school\n(B) High school graduate or equivalent (e.g., GED)\n"
        "(C) Some college, but no degree\n(D) Associate degree\n(E) Bachelor's degree\n"
        "(F) Professional degree (e.g., JD, MD)\n(G) Master's degree\n(H) Doctoral degree\n"
        "(I) Prefer not to answer\n\nAnswer:"
    ),
    TraitKind.income: (
        "Question: What is your annual household income?\n"
        "(A) Less than $10,000\n(B) $10,000 to $19,999\n(C) $20,000 to $29,999\n"
        "(D) $30,000 to $39,999\n(E) $40,000 to $49,999\n(F) $50,000 to $59,999\n"
        "(G) $60,000 to $69,999\n(H) $70,000 to $79,999\n(I) $80,000 to $89,999\n"
        "(J) $90,000 to $99,999\n(K) $100,000 to $149,999\n(L) $150,000 to $199,999\n"
        "(M) $200,000 or more\n(N) Prefer not to answer\n\nAnswer:"
    ),
    TraitKind.race_ethnicity: (
        "Question: Which of the following racial or ethnic groups do you identify with?\n"
        "(A) American Indian or Alaska Native\n(B) Asian or Asian American\n"
        "(C) Black or African American\n(D) Hispanic or Latino/a\n"
        "(E) Middle Eastern or North African\n(F) Native Hawaiian or Other Pacific Islander\n"
        "(G) White or European\n(H) Other\n(I) Prefer not to answer\n\nAnswer:"
    ),
    TraitKind.party: (
        "Question: Generally speaking, do you usually think of yourself as ...?\n"
        "(A) Democrat\n(B) Republican\n(C) Independent\n(D) Other\n"
        "(E) No preference\n\nAnswer:"
    ),
}

NOT_MENTIONED = "not_mentioned"

# Stage-1 variants of the option sets: same letters, refusal labelled
# "Was not mentioned" as administered in the evidence-seeking prompts.
STAGE1_OPTION_SETS: dict[TraitKind, TraitOptionSet] = {
    kind: TraitOptionSet(
        kind,
        tuple(
            (letter, "Was not mentioned" if letter in opts.refusal_letters else label)
            for letter, label in opts.options
        ),
        opts.refusal_letters,
    )
    for kind, opts in TRAIT_OPTION_SETS.items()
}


@dataclass(frozen=True)
class EvidenceFinding:
    trait: TraitKind
    option: str | None  # option letter, or None when not mentioned
    evidence_quote: str | None = None

    def __post_init__(self):
        if (self.option is None) != (self.evidence_quote is None):
            raise ValueError("evidence_quote present exactly when an option was found")


@dataclass(frozen=True)
class TraitDistribution:
    trait: TraitKind
    probabilities: Mapping[str, float]
    support_count: int  # parsed non-refusal samples; 0 for one-hot stage-1 results

    def __post_init__(self):
        total = 0.0
        for letter, p in self.probabilities.items():
            if p < -PROB_TOL:
                raise ValueError(f"negative probability for {letter}")
            total += p
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {total}, expected 1")

    @property
    def is_one_hot(self) -> bool:
        return any(abs(p - 1.0) <= PROB_TOL for p in self.probabilities.values())

    def probability(self, letter: str) -> float:
        return float(self.probabilities.get(letter, 0.0))


@dataclass(frozen=True)
class PersonaProfile:
    backstory_id: str
    distributions: Mapping[TraitKind, TraitDistribution]

    def __post_init__(self):
        if set(self.distributions) != set(TraitKind):
            missing = set(TraitKind) - set(self.distributions)
            raise ValueError(f"profile missing traits: {sorted(k.value for k in missing)}")


class AnnotationError(Exception):
    def __init__(self, backstory_id: str, trait: TraitKind, message: str):
        self.backstory_id = backstory_id
        self.trait = trait
        super().__init__(f"backstory {backstory_id}, trait {trait.value}: {message}")


# ---------------------------------------------------------------------------
# choice parsing

_PAREN_LETTER = re.compile(r"\(([A-Za-z])\)")
_HALF_PAREN = re.compile(r"(?<![A-Za-z0-9(])([A-Za-z])\)")
_AGE_PHRASE = re.compile(
    r"\b(\d{1,3})\s*(?:-?\s*years?[ -]old|years?\s+of\s+age|yrs?\s*old)", re.IGNORECASE
)


def _label_pattern(label: str) -> re.Pattern:
    return re.compile(
        r"(?<![A-Za-z0-9])" + re.escape(label) + r"(?![A-Za-z0-9])", re.IGNORECASE
    )


def _age_brackets(option_set: TraitOptionSet) -> list[tuple[str, int, float]]:
    """Derive (letter, low, high) bounds from labels like '25-34' and '65+'."""
    brackets = []
    for letter, label in option_set.options:
        m = re.fullmatch(r"(\d+)-(\d+)", label)
        if m:
            brackets.append((letter, int(m.group(1)), float(m.group(2))))
            continue
        m = re.fullmatch(r"(\d+)\+", label)
        if m:
            brackets.append((letter, int(m.group(1)), float("inf")))
    return brackets


def parse_choice(free_text: str, option_set: TraitOptionSet) -> str | None:
    """Map free text to an option letter, or None when unparseable.

    Recognized, in order: a parenthesized designator "(X)", the half form
    "X)", a bare letter standing alone or adjacent to its own option label,
    the label text itself, and (for bracketed numeric traits such as age) a
    stated number mapped into its bracket. The first match wins.
    """
    valid = set(option_set.letters)
    text = free_text.strip()
    if not text:
        return None

    for regex in (_PAREN_LETTER, _HALF_PAREN):
        for m in regex.finditer(text):
            letter = m.group(1).upper()
            if letter in valid:
                return letter

    # entire reply is a bare letter (optionally punctuated)
    bare = text.rstrip(" .:,")
    if len(bare) == 1 and bare.upper() in valid:
        return bare.upper()

    # bare letter immediately followed by that option's own label
    for letter, label in option_set.options:
        pat = re.compile(
            r"(?<![A-Za-z0-9])" + re.escape(letter) + r"[.:]?\s+" + re.escape(label[:12]),
            re.IGNORECASE,
        )
        if pat.search(text):
            return letter

    # label-text fallback: earliest occurrence wins, longer label breaks ties
    best: tuple[int, int, str] | None = None  # (start, -len, letter)
    for letter, label in option_set.options:
        m = _label_pattern(label).search(text)
        if m:
            key = (m.start(), -len(label), letter)
            if best is None or key < best:
                best = key
    if best is not None:
        return best[2]

    brackets = _age_brackets(option_set)
    if brackets:
        m = _AGE_PHRASE.search(text)
        if m:
            age = int(m.group(1))
            for letter, low, high in brackets:
                if low <= age <= high:
                    return letter
    return None


# ---------------------------------------------------------------------------
# stage 1: explicit evidence extraction

def _stage1_prompt(story: Backstory, trait: TraitKind) -> str:
    return story.transcript + "\n\n" + STAGE1_PROMPTS[trait]


_QUOTED = re.compile(r'"([^"]+)"')


def extract_explicit(
    story: Backstory, trait: TraitKind, extractor_backend: Backend
) -> EvidenceFinding:
    """Stage 1: ask the extractor whether the trait is explicitly verbalized.

    The extractor must both pick an option and cite a supporting quote; a
    substantive option whose quote cannot be found in the transcript is
    demoted to not-mentioned (the citation rule guards against extractor
    hallucination). Unparseable replies also map to not-mentioned.
    """
    if not story.turns:
        raise ValueError("backstory has no turns")
    option_set = STAGE1_OPTION_SETS[trait]
    request = CompletionRequest(
        prompt=_stage1_prompt(story, trait),
        max_tokens=128,
        temperature=0.0,
        seed=0,
    )
    reply = complete(request, extractor_backend).text.strip()
    letter = parse_choice(reply, option_set)
    if letter is None:
        log.warning(
            "unparseable stage-1 reply for %s/%s: %r", story.id, trait.value, reply[:80]
        )
        return EvidenceFinding(trait, None)
    if letter in option_set.refusal_letters:
        return EvidenceFinding(trait, None)

    quote_match = _QUOTED.search(reply)
    if quote_match:
        quote = quote_match.group(1).strip()
    else:
        # fall back to the text before the answer designator
        head = re.split(r"\(" + letter + r"\)", reply)[0]
        head = re.sub(r"(?i)^evidence\s*:\s*", "", head.strip())
        quote = head.strip(" .\n'")
    if quote and normalize_ws(quote).casefold() in normalize_ws(story.transcript).casefold():
        return EvidenceFinding(trait, letter, quote)
    log.warning(
        "stage-1 evidence for %s/%s not found in transcript; treating as not mentioned",
        story.id, trait.value,
    )
    return EvidenceFinding(trait, None)


# ---------------------------------------------------------------------------
# stage 2: sampled distribution

def _stage2_prompt(story: Backstory, trait: TraitKind) -> str:
    return story.transcript + "\n\n" + STAGE2_QUESTIONS[trait]


def sample_trait_distribution(
    story: Backstory,
    trait: TraitKind,
    backend: Backend,
    *,
    n_samples: int = 40,
    seed: int = 0,
    max_tokens: int = 32,
) -> TraitDistribution:
    """Stage 2: empirical trait distribution from repeated self-report samples.

    Draws n_samples completions at temperature 1.0 / top_p 1.0, parses each
    into an option, and normalizes counts over parsed non-refusal options.
    Unparseable samples and refusal picks are dropped from the denominator.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    option_set = TRAIT_OPTION_SETS[trait]
    prompt = _stage2_prompt(story, trait)
    counts: dict[str, int] = {}
    for i in range(n_samples):
        request = CompletionRequest(
            prompt=prompt,
            max_tokens=max_tokens,
            temperature=1.0,
            top_p=1.0,
            seed=derive_seed(seed, story.id, trait.value, "stage2", i),
        )
        reply = complete(request, backend).text
        letter = parse_choice(reply, option_set)
        if letter is None or letter in option_set.refusal_letters:
            continue
        counts[letter] = counts.get(letter, 0) + 1
    support = sum(counts.values())
    if support == 0:
        raise AnnotationError(
            story.id, trait, f"no parseable non-refusal samples out of {n_samples}"
        )
    probs = {letter: counts[letter] / support for letter in sorted(counts)}
    return TraitDistribution(trait, probs, support)


def annotate_with_evidence(
    story: Backstory,
    *,
    extractor_backend: Backend,
    sampler_backend: Backend,
    n_samples: int = 40,
    seed: int = 0,
) -> tuple[PersonaProfile, dict[TraitKind, str]]:
    """Annotate one backstory, also returning the stage-1 evidence quotes.

    Per trait: stage 1 first; an explicit, quote-verified hit becomes a
    one-hot distribution (support_count 0), otherwise stage 2 builds the
    sampled distribution. Any trait failure aborts the whole profile.
    """
    distributions: dict[TraitKind, TraitDistribution] = {}
    evidence: dict[TraitKind, str] = {}
    for trait in TraitKind:
        finding = extract_explicit(story, trait, extractor_backend)
        if finding.option is not None:
            distributions[trait] = TraitDistribution(
                trait, {finding.option: 1.0}, support_count=0
            )
            evidence[trait] = finding.evidence_quote
        else:
            distributions[trait] = sample_trait_distribution(
                story, trait, sampler_backend, n_samples=n_samples, seed=seed
            )
    return PersonaProfile(story.id, distributions), evidence


def annotate(
    story: Backstory,
    *,
    extractor_backend: Backend,
    sampler_backend: Backend,
    n_samples: int = 40,
    seed: int = 0,
) -> PersonaProfile:
    """Six-trait profile for one backstory (see annotate_with_evidence)."""
    profile, _ = annotate_with_evidence(
        story,
        extractor_backend=extractor_backend,
        sampler_backend=sampler_backend,
        n_samples=n_samples,
        seed=seed,
    )
    return profile


# ---------------------------------------------------------------------------
# persistence

def profile_to_records(
    profile: PersonaProfile, evidence: Mapping[TraitKind, str] | None = None
) -> list[dict]:
    """One JSONL record per trait for a persisted profile."""
    records = []
    for trait in TraitKind:
        dist = profile.distributions[trait]
        rec = {
            "backstory_id": profile.backstory_id,
            "trait": trait.value,
            "method": "explicit" if dist.support_count == 0 else "sampled",
            "probabilities": {k: dist.probabilities[k] for k in sorted(dist.probabilities)},
            "support_count": dist.support_count,
        }
        if evidence and trait in evidence:
            rec["evidence_quote"] = evidence[trait]
        records.append(rec)
    return records


def profile_from_records(records: Sequence[dict]) -> PersonaProfile:
    if not records:
        raise ValueError("no records")
    backstory_id = records[0]["backstory_id"]
    distributions = {}
    for rec in records:
        trait = TraitKind(rec["trait"])
        distributions[trait] = TraitDistribution(
            trait, dict(rec["probabilities"]), rec["support_count"]
        )
    return PersonaProfile(backstory_id, distributions)


def option_sets_json() -> list[dict]:
    """Versioned export of the embedded option sets."""
    return [
        {
            "trait": kind.value,
            "options": [{"letter": l, "label": lab} for l, lab in opts.options],
            "refusal_letters": sorted(opts.refusal_letters),
        }
        for kind, opts in TRAIT_OPTION_SETS.items()
    ]
