"""The three study question banks and survey administration.

Banks: ten partisan trait-evaluation items (two symmetric sets of five),
twenty-four democratic-subversion items (two symmetric sets of twelve, each
set addressed to one party), and six warmth/meta-warmth items. Texts and
options are embedded verbatim as checksum-pinned constants.

Administration renders a conditioning context (full backstory transcript or
one of the demographic prompting baselines), appends one lettered question
with an Answer cue, and measures a response distribution either from token
scores over the option letters or from repeated sampling.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .backstory import Backstory
from .demographics import TRAIT_OPTION_SETS, TraitKind, parse_choice
from .llm import Backend, CompletionRequest, complete, option_distribution
from .matching import HumanRespondent
from .util import derive_seed

log = logging.getLogger(__name__)


class Study(str, Enum):
    atp_w110 = "atp_w110"
    subversion = "subversion"
    meta_prejudice = "meta_prejudice"


class Party(str, Enum):
    democrat = "democrat"
    republican = "republican"


def other_party(party: Party | str) -> Party:
    party = Party(party)
    return Party.republican if party == Party.democrat else Party.democrat


class Perspective(str, Enum):
    self_opinion = "self_opinion"      # own ratings and feelings
    self_action = "self_action"        # own willingness to act
    ingroup_meta = "ingroup_meta"      # what MOST members of a party would do
    meta_perception = "meta_perception"  # beliefs about another group's feelings


class ConditioningMethod(str, Enum):
    backstory = "backstory"
    qa = "qa"
    bio = "bio"
    portray = "portray"
    generative_agent = "generative_agent"


@dataclass(frozen=True)
class SurveyQuestion:
    id: str
    study: Study
    text: str
    options: tuple[tuple[str, str], ...]
    target_party: Party
    perspective: Perspective
    asked_to: str  # "all" | "democrats" | "republicans"
    trait_dim: str | None = None

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.options)

    def asked_to_party(self, party: str) -> bool:
        return self.asked_to == "all" or self.asked_to == f"{party}s"


@dataclass(frozen=True)
class OptionView:
    """Adapter so the shared choice parser can run over survey options."""

    options: tuple[tuple[str, str], ...]

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.options)


@dataclass(frozen=True)
class ResponseDistribution:
    question_id: str
    respondent_id: str
    probabilities: Mapping[str, float]
    mode: str  # "token_scores" | "sampled"
    n_samples: int = 0

    def __post_init__(self):
        total = sum(self.probabilities.values())
        if abs(total - 1.0) > 1e-9 or any(p < 0 for p in self.probabilities.values()):
            raise ValueError(f"invalid probability vector (sum {total})")

    def probability(self, letter: str) -> float:
        return float(self.probabilities.get(letter, 0.0))


class SurveyError(Exception):
    pass


# ---------------------------------------------------------------------------
# question banks

_ATP_STEM = "Compared to other Americans, would you say {party} are..."

_ATP_TRAIT_OPTIONS: dict[str, tuple[str, ...]] = {
    "moral": ("A lot more moral", "Somewhat more moral", "About the same",
              "Somewhat more immoral", "A lot more immoral"),
    "hard_working": ("A lot more hard-working", "Somewhat more hard-working",
                     "About the same", "Somewhat more lazy", "A lot more lazy"),
    "open_minded": ("A lot more open-minded", "Somewhat more open-minded",
                    "About the same", "Somewhat more close-minded",
                    "A lot more close-minded"),
    "intelligent": ("A lot more intelligent", "Somewhat more intelligent",
                    "About the same", "Somewhat more unintelligent",
                    "A lot more unintelligent"),
    "honest": ("A lot more honest", "Somewhat more honest", "About the same",
               "Somewhat more dishonest", "A lot more dishonest"),
}

_SUBVERSION_OPTIONS = ("Never", "Probably Not", "Probably", "Definitely")

_WARMTH_OPTIONS = ("Very cold", "Cold", "Neutral", "Warm", "Very warm")

# Subversion scenario templates. ACTOR is the party whose willingness is
# probed; VICTIM is the opposing party on the receiving end.
_SUBVERSION_SCENARIOS: tuple[tuple[str, str], ...] = (
    ("judges", "Would {SUBJ} support ignoring controversial court rulings by "
               "{VICTIM_SG} JUDGES?"),
    ("journalists", "Would {SUBJ} support freezing the social media accounts of "
                    "{VICTIM_SG} JOURNALISTS?"),
    ("voting_stations", "Would {SUBJ} support reducing the number of voting "
                        "stations in towns that support {VICTIM_PL}?"),
    ("elections", "Would {SUBJ} support laws that would make it easier for "
                  "{ACTOR_PL} (and harder for {VICTIM_PL}) to get elected?"),
    ("violence", "Would {SUBJ} support using violence to block major "
                 "{VICTIM_SG} laws?"),
    ("constitution", "Would {SUBJ} support significantly reinterpreting the "
                     "Constitution in order to block {VICTIM_SG} policies?"),
)

_PARTY_PLURAL = {Party.democrat: "DEMOCRATS", Party.republican: "REPUBLICANS"}
_PARTY_SINGULAR = {Party.democrat: "DEMOCRAT", Party.republican: "REPUBLICAN"}


def _letters(labels: Sequence[str]) -> tuple[tuple[str, str], ...]:
    return tuple((chr(ord("A") + i), label) for i, label in enumerate(labels))


def _atp_questions() -> list[SurveyQuestion]:
    questions = []
    for target in (Party.democrat, Party.republican):
        for dim, labels in _ATP_TRAIT_OPTIONS.items():
            questions.append(
                SurveyQuestion(
                    id=f"atp_{target.value}_{dim}",
                    study=Study.atp_w110,
                    text=_ATP_STEM.format(party=_PARTY_PLURAL[target].capitalize()),
                    options=_letters(labels),
                    target_party=target,
                    perspective=Perspective.self_opinion,
                    asked_to="all",
                    trait_dim=dim,
                )
            )
    return questions


def _subversion_questions() -> list[SurveyQuestion]:
    questions = []
    for respondent_party in (Party.republican, Party.democrat):
        target = other_party(respondent_party)  # whose willingness the meta items probe
        # meta items: what would MOST members of the opposing party do
        for key, template in _SUBVERSION_SCENARIOS:
            text = template.format(
                SUBJ=f"MOST {_PARTY_PLURAL[target]}",
                ACTOR_PL=_PARTY_PLURAL[target],
                VICTIM_PL=_PARTY_PLURAL[respondent_party],
                VICTIM_SG=_PARTY_SINGULAR[respondent_party],
            )
            questions.append(
                SurveyQuestion(
                    id=f"subversion_{respondent_party.value}_meta_{key}",
                    study=Study.subversion,
                    text=text,
                    options=_letters(_SUBVERSION_OPTIONS),
                    target_party=target,
                    perspective=Perspective.ingroup_meta,
                    asked_to=f"{respondent_party.value}s",
                )
            )
        # self items: the respondent's own willingness to subvert
        for key, template in _SUBVERSION_SCENARIOS:
            text = template.format(
                SUBJ="YOU",
                ACTOR_PL=_PARTY_PLURAL[respondent_party],
                VICTIM_PL=_PARTY_PLURAL[target],
                VICTIM_SG=_PARTY_SINGULAR[target],
            )
            questions.append(
                SurveyQuestion(
                    id=f"subversion_{respondent_party.value}_self_{key}",
                    study=Study.subversion,
                    text=text,
                    options=_letters(_SUBVERSION_OPTIONS),
                    target_party=respondent_party,
                    perspective=Perspective.self_action,
                    asked_to=f"{respondent_party.value}s",
                )
            )
    return questions


def _meta_prejudice_questions() -> list[SurveyQuestion]:
    opts = _letters(_WARMTH_OPTIONS)
    return [
        SurveyQuestion(
            id="meta_feel_democrats",
            study=Study.meta_prejudice,
            text="How warm or cold do you feel towards DEMOCRATS?",
            options=opts,
            target_party=Party.democrat,
            perspective=Perspective.self_opinion,
            asked_to="all",
        ),
        SurveyQuestion(
            id="meta_feel_republicans",
            study=Study.meta_prejudice,
            text="How warm or cold do you feel towards REPUBLICANS?",
            options=opts,
            target_party=Party.republican,
            perspective=Perspective.self_opinion,
            asked_to="all",
        ),
        SurveyQuestion(
            id="meta_think_rep_feel_democrats",
            study=Study.meta_prejudice,
            text="How warm or cold do you think REPUBLICANS feel towards DEMOCRATS?",
            options=opts,
            target_party=Party.democrat,
            perspective=Perspective.meta_perception,
            asked_to="democrats",
        ),
        SurveyQuestion(
            id="meta_think_rep_feel_republicans",
            study=Study.meta_prejudice,
            text="How warm or cold do you think REPUBLICANS feel towards REPUBLICANS",
            options=opts,
            target_party=Party.republican,
            perspective=Perspective.meta_perception,
            asked_to="democrats",
        ),
        SurveyQuestion(
            id="meta_think_dem_feel_democrats",
            study=Study.meta_prejudice,
            text="How warm or cold do you think DEMOCRATS feel towards DEMOCRATS?",
            options=opts,
            target_party=Party.democrat,
            perspective=Perspective.meta_perception,
            asked_to="republicans",
        ),
        SurveyQuestion(
            id="meta_think_dem_feel_republicans",
            study=Study.meta_prejudice,
            text="How warm or cold do you think DEMOCRATS feel towards REPUBLICANS?",
            options=opts,
            target_party=Party.republican,
            perspective=Perspective.meta_perception,
            asked_to="republicans",
        ),
    ]


def load_study(study: Study | str) -> list[SurveyQuestion]:
    study = Study(study)
    if study == Study.atp_w110:
        return _atp_questions()
    if study == Study.subversion:
        return _subversion_questions()
    return _meta_prejudice_questions()


def study_bank_json(study: Study | str) -> list[dict]:
    return [
        {
            "id": q.id,
            "study": q.study.value,
            "text": q.text,
            "options": [{"letter": l, "label": lab} for l, lab in q.options],
            "target_party": q.target_party.value,
            "perspective": q.perspective.value,
            "asked_to": q.asked_to,
            "trait_dim": q.trait_dim,
        }
        for q in load_study(study)
    ]


def study_bank_checksum(study: Study | str) -> str:
    payload = json.dumps(study_bank_json(study), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


# ---------------------------------------------------------------------------
# conditioning contexts

_QA_QUESTIONS: dict[TraitKind, str] = {
    TraitKind.age: "What is your age?",
    TraitKind.gender: "What is your gender?",
    TraitKind.education: "What is the highest level of education you have completed?",
    TraitKind.income: "What is your annual household income?",
    TraitKind.race_ethnicity: "Which racial or ethnic groups do you identify with?",
    TraitKind.party: "What is your political affiliation?",
}


def _age_phrase(label: str) -> str:
    m = re.fullmatch(r"(\d+)-(\d+)", label)
    if m:
        return f"between {m.group(1)} and {m.group(2)} years old"
    m = re.fullmatch(r"(\d+)\+", label)
    if m:
        return f"{m.group(1)} or older"
    return label


def _party_sentence(label: str, *, second_person: bool) -> str:
    subject = "You are" if second_person else "I am"
    if label in ("Democrat", "Republican"):
        return f"{subject} a {label}."
    if label == "Independent":
        return f"{subject} an Independent."
    return ("Your" if second_person else "My") + " political affiliation is other."


def _trait_sentences(human: HumanRespondent, *, second_person: bool) -> list[str]:
    you = second_person
    sentences = []
    for kind in TraitKind:
        letter = human.traits[kind]
        option_set = TRAIT_OPTION_SETS[kind]
        if letter in option_set.refusal_letters:
            continue
        label = option_set.label(letter)
        if kind == TraitKind.age:
            sentences.append(("You are " if you else "I am ") + _age_phrase(label) + ".")
        elif kind == TraitKind.gender:
            if label in ("Male", "Female"):
                sentences.append(("You are " if you else "I am ") + label.lower() + ".")
            else:
                sentences.append(
                    ("Your" if you else "My") + " gender is other (e.g., non-binary, trans)."
                )
        elif kind == TraitKind.education:
            sentences.append(
                ("Your" if you else "My") + f" highest level of education is {label}."
            )
        elif kind == TraitKind.income:
            sentences.append(
                ("Your" if you else "My") + f" annual household income is {label}."
            )
        elif kind == TraitKind.race_ethnicity:
            sentences.append(("You identify as " if you else "I identify as ") + label + ".")
        elif kind == TraitKind.party:
            sentences.append(_party_sentence(label, second_person=you))
    return sentences


def render_condition(
    method: ConditioningMethod | str,
    human: HumanRespondent | None = None,
    backstory: Backstory | None = None,
    reflections: Sequence[str] | None = None,
) -> str:
    """Build the conditioning text for one respondent under a given method."""
    method = ConditioningMethod(method)
    if method in (ConditioningMethod.backstory, ConditioningMethod.generative_agent):
        if backstory is None:
            raise SurveyError(f"method {method.value} requires a backstory")
        if method == ConditioningMethod.backstory:
            return backstory.transcript
        parts = [
            "Participant's interview transcript:",
            "",
            backstory.transcript,
            "",
            "Expert political scientist's observations/reflections:",
            "",
        ]
        parts.extend(f"{i + 1}. {obs}" for i, obs in enumerate(reflections or []))
        return "\n".join(parts)
    if human is None:
        raise SurveyError(f"method {method.value} requires a human respondent")
    if method == ConditioningMethod.qa:
        lines = []
        for kind in TraitKind:
            letter = human.traits[kind]
            option_set = TRAIT_OPTION_SETS[kind]
            if letter in option_set.refusal_letters:
                continue
            lines.append(f"Q: {_QA_QUESTIONS[kind]} A: {option_set.label(letter)}")
        return "\n".join(lines)
    if method == ConditioningMethod.bio:
        return " ".join(_trait_sentences(human, second_person=False))
    if method == ConditioningMethod.portray:
        return " ".join(_trait_sentences(human, second_person=True))
    raise SurveyError(f"unsupported conditioning method: {method}")


# ---------------------------------------------------------------------------
# expert reflections (generative-agent conditioning)

REFLECTION_PROMPT = (
    "Imagine you are an expert political scientist (with a PhD) taking notes "
    "while observing this interview. Write observations/reflections about the "
    "interviewee's political views, affiliation with political parties, and "
    "stances about key societal issues. (You should make more than 5 "
    "observations and fewer than 20. Choose the number that makes sense given "
    "the depth of the interview content above.)"
)

_NUMBERED_LINE = re.compile(r"^\s*(?:\d+[\.\)]|[-*])\s*(.+)$")

MAX_OBSERVATIONS = 20


def expert_reflection(backstory: Backstory, backend: Backend) -> list[str]:
    """Elicit up to 20 analyst observations about the interviewee."""
    if backstory is None or not backstory.turns:
        raise SurveyError("expert reflection needs a non-empty backstory")
    prompt = backstory.transcript + "\n\n" + REFLECTION_PROMPT
    request = CompletionRequest(prompt=prompt, max_tokens=1024, temperature=0.0, seed=0)
    reply = complete(request, backend).text
    observations = []
    for line in reply.splitlines():
        line = line.strip()
        if not line:
            continue
        m = _NUMBERED_LINE.match(line)
        observations.append(m.group(1).strip() if m else line)
    if len(observations) < 5:
        log.warning(
            "reflection for %s produced only %d observations", backstory.id, len(observations)
        )
    return observations[:MAX_OBSERVATIONS]


# ---------------------------------------------------------------------------
# administration

def render_question_block(question: SurveyQuestion) -> str:
    lines = [f"Question: {question.text}"]
    lines.extend(f"({letter}) {label}" for letter, label in question.options)
    lines.append("")
    lines.append("Answer:")
    return "\n".join(lines)


_GENAGENT_TASK = """\
=====

Task: What you see above is an interview transcript. Based on the interview \
transcript, I want you to predict the participant's survey responses. All \
questions are multiple choice where you must guess from one of the options \
presented.

As you answer, I want you to take the following steps:
Step 1) Describe in a few sentences the kind of person that would choose each \
of the response options. ("Option Interpretation")
Step 2) For each response options, reason about why the Participant might \
answer with the particular option. ("Option Choice")
Step 3) Write a few sentences reasoning on which of the option best predicts \
the participant's response ("Reasoning")
Step 4) Predict how the participant will actually respond in the survey. \
Predict based on the interview and your thoughts, but ultimately, DON'T over \
think it. Use your system 1 (fast, intuitive) thinking. ("Response")

Here are the questions:

{questions}

-----

Output format -- output your response in json, where you provide the following:

{{"1": {{"Q": "<repeat the question you are answering>",
       "Option Interpretation": {{"<option 1>": "...", "<option 2>": "..."}},
       "Option Choice": {{"<option 1>": "...", "<option 2>": "..."}},
       "Reasoning": "<reasoning on which of the option best predicts the participant's response>",
       "Response": "<your prediction on how the participant will answer the question>"}},
 "2": {{...}},
 ...}}
"""

_JSON_FENCE = re.compile(r"```(?:json)?\s*([\s\S]*?)```", re.IGNORECASE)


def _parse_genagent_reply(reply: str, question: SurveyQuestion) -> str:
    m = _JSON_FENCE.search(reply)
    body = m.group(1) if m else reply
    start = body.find("{")
    if start == -1:
        raise SurveyError("no JSON object in reply")
    try:
        data = json.loads(body[start:])
    except json.JSONDecodeError as exc:
        raise SurveyError(f"unparseable JSON reply: {exc}") from exc
    entry = data.get("1") if isinstance(data, dict) else None
    if entry is None and isinstance(data, dict) and data:
        entry = next(iter(data.values()))
    if not isinstance(entry, dict) or "Response" not in entry:
        raise SurveyError("JSON reply missing a Response field")
    letter = parse_choice(str(entry["Response"]), OptionView(question.options))
    if letter is None:
        raise SurveyError(f"Response field {entry['Response']!r} is not a valid option")
    return letter


def administer(
    question: SurveyQuestion,
    conditioning_text: str,
    backend: Backend,
    mode: str = "token_scores",
    *,
    n_samples: int = 40,
    seed: int = 0,
) -> ResponseDistribution:
    """Measure one respondent's response distribution for one question.

    token_scores: renormalized scores over the option letters. sampled: N
    temperature-1.0 draws parsed into letters, empirical distribution.
    generative_agent: one temperature-0 structured-JSON prediction, one-hot.
    """
    if not conditioning_text:
        raise SurveyError("conditioning text must be non-empty")
    prompt = conditioning_text + "\n\n" + render_question_block(question)
    letters = question.letters
    if mode == "token_scores":
        probs = option_distribution(
            prompt, letters, backend, seed=seed, n_samples=n_samples,
        )
        return ResponseDistribution(question.id, "", probs, mode="token_scores")
    if mode == "sampled":
        view = OptionView(question.options)
        counts = {l: 0 for l in letters}
        parsed = 0
        for i in range(n_samples):
            request = CompletionRequest(
                prompt=prompt,
                max_tokens=24,
                temperature=1.0,
                top_p=1.0,
                seed=derive_seed(seed, question.id, "survey_sample", i),
            )
            reply = complete(request, backend).text
            letter = parse_choice(reply, view)
            if letter is not None:
                counts[letter] += 1
                parsed += 1
        if parsed == 0:
            raise SurveyError(
                f"question {question.id}: none of {n_samples} samples parsed"
            )
        probs = {l: c / parsed for l, c in counts.items()}
        return ResponseDistribution(
            question.id, "", probs, mode="sampled", n_samples=parsed
        )
    if mode == "generative_agent":
        prompt = conditioning_text + "\n\n" + _GENAGENT_TASK.format(
            questions=render_question_block(question)
        )
        request = CompletionRequest(prompt=prompt, max_tokens=2048, temperature=0.0, seed=seed)
        reply = complete(request, backend).text
        letter = _parse_genagent_reply(reply, question)
        probs = {l: (1.0 if l == letter else 0.0) for l in letters}
        return ResponseDistribution(question.id, "", probs, mode="sampled", n_samples=1)
    raise SurveyError(f"unknown administration mode: {mode}")


# ---------------------------------------------------------------------------
# full study runs

@dataclass(frozen=True)
class SurveyRespondent:
    id: str
    party: str
    human: HumanRespondent | None = None
    backstory: Backstory | None = None


@dataclass
class StudyRun:
    study: Study
    distributions: dict[tuple[str, str], ResponseDistribution]  # (rid, qid)
    parties: dict[str, str]
    failures: list[tuple[str, str, str]]


def _respondent_cells(
    resp: SurveyRespondent,
    questions: Sequence[SurveyQuestion],
    backend: Backend,
    method: ConditioningMethod,
    mode: str,
    n_samples: int,
    seed: int,
    reflection_backend: Backend | None,
) -> tuple[list[tuple[tuple[str, str], ResponseDistribution]], list[tuple[str, str, str]]]:
    cells: list[tuple[tuple[str, str], ResponseDistribution]] = []
    failures: list[tuple[str, str, str]] = []
    reflections = None
    if method == ConditioningMethod.generative_agent:
        reflections = expert_reflection(resp.backstory, reflection_backend or backend)
    conditioning = render_condition(
        method, human=resp.human, backstory=resp.backstory, reflections=reflections
    )
    cell_mode = (
        "generative_agent" if method == ConditioningMethod.generative_agent else mode
    )
    for question in questions:
        if not question.asked_to_party(resp.party):
            continue
        try:
            dist = administer(
                question,
                conditioning,
                backend,
                cell_mode,
                n_samples=n_samples,
                seed=derive_seed(seed, resp.id, question.id),
            )
        except Exception as exc:  # record and continue
            failures.append((resp.id, question.id, str(exc)))
            log.warning("cell (%s, %s) failed: %s", resp.id, question.id, exc)
            continue
        cells.append(
            (
                (resp.id, question.id),
                ResponseDistribution(
                    question.id, resp.id, dist.probabilities, dist.mode, dist.n_samples
                ),
            )
        )
    return cells, failures


def run_study(
    study: Study | str,
    respondents: Sequence[SurveyRespondent],
    backend: Backend,
    *,
    method: ConditioningMethod | str = ConditioningMethod.backstory,
    mode: str = "token_scores",
    n_samples: int = 40,
    seed: int = 0,
    reflection_backend: Backend | None = None,
    workers: int = 1,
) -> StudyRun:
    """Administer a full study to a cohort.

    Each respondent answers only the questions addressed to their party.
    Cell failures are recorded and the run continues. Respondents can run
    under a bounded worker pool; results merge deterministically by
    (respondent, question) key, so the outcome does not depend on worker
    count or scheduling.
    """
    study = Study(study)
    method = ConditioningMethod(method)
    if not respondents:
        raise SurveyError("cohort is empty")
    questions = load_study(study)
    run = StudyRun(study, {}, {}, [])
    for resp in respondents:
        run.parties[resp.id] = resp.party

    def work(resp: SurveyRespondent):
        return _respondent_cells(
            resp, questions, backend, method, mode, n_samples, seed, reflection_backend
        )

    if workers > 1 and len(respondents) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, respondents))
    else:
        results = [work(resp) for resp in respondents]
    for cells, failures in results:
        run.distributions.update(cells)
        run.failures.extend(failures)
    return run


def run_to_records(run: StudyRun) -> list[dict]:
    records = []
    for (rid, qid) in sorted(run.distributions):
        dist = run.distributions[(rid, qid)]
        records.append(
            {
                "respondent_id": rid,
                "question_id": qid,
                "mode": dist.mode,
                "probabilities": {k: dist.probabilities[k] for k in sorted(dist.probabilities)},
            }
        )
    return records


def run_from_records(
    study: Study | str, records: Sequence[dict], parties: Mapping[str, str]
) -> StudyRun:
    run = StudyRun(Study(study), {}, dict(parties), [])
    for rec in records:
        rid, qid = rec["respondent_id"], rec["question_id"]
        run.distributions[(rid, qid)] = ResponseDistribution(
            qid, rid, dict(rec["probabilities"]), rec.get("mode", "token_scores")
        )
    return run
