"""Interview-transcript backstory generation with critic-gated resampling.

A backstory is built question by question: each candidate answer is vetted
by a second model acting as a critic, and rejected candidates are resampled
with a fresh seed until one passes or the retry bound is exhausted. The
critic is deliberately conservative: it only rejects strict factual
contradictions with earlier turns or artifacts that cannot belong in a
spoken answer (role reversal, repeated questions, metadata, code). Opinions
and content are never grounds for rejection.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from .llm import Backend, CompletionRequest, complete
from .util import count_tokens, derive_seed

log = logging.getLogger(__name__)

# Fixed open-ended interview bank, in administration order.
INTERVIEW_QUESTIONS: tuple[str, ...] = (
    "To start, I would like to begin with a big question: tell me the story of "
    "your life. Start from the beginning--from your childhood, to education, to "
    "family and relationships, and to any major life events you may have had.",
    "Some people tell us that they've reached a crossroads at some points in "
    "their life where multiple paths were available, and their choice then made "
    "a significant difference in defining who they are. What about you? Was "
    "there a moment like that for you, and if so, could you tell me the whole "
    "story about that from start to finish?",
    "Tell me about anyone else in your life we haven't discussed (like friends "
    "or romantic partners). Are there people outside of your family who are "
    "important to you?",
    "Now let's talk about your current neighborhood. Tell me all about the "
    "neighborhood and area in which you are living now.",
    "Tell me about any recent changes to your daily routine.",
    "How would you describe your political views?",
    "How have you been thinking about race in the U.S. recently?",
    "For you, what makes it easy or hard to stay healthy?",
    "Some people are excited about medical vaccination, and others, not so "
    "much. How about you?",
    "Some people say they struggle with depression, anxiety, or something else "
    "like that. How about for you?",
)

DEFAULT_STOP_SEQUENCE = "\nQuestion:"


class RejectReason(str, Enum):
    factual_inconsistency = "factual_inconsistency"
    role_reversal = "role_reversal"
    question_repetition = "question_repetition"
    metadata_or_code = "metadata_or_code"
    other_incoherence = "other_incoherence"
    none = "none"


@dataclass(frozen=True)
class InterviewQuestion:
    id: int
    text: str


@dataclass(frozen=True)
class InterviewTurn:
    question: InterviewQuestion
    answer: str
    attempts: int = 1

    def __post_init__(self):
        if not self.answer:
            raise ValueError("answer must be non-empty")
        if self.attempts < 1:
            raise ValueError("attempts must be positive")


@dataclass(frozen=True)
class CritiqueVerdict:
    accept: bool
    reason: RejectReason = RejectReason.none

    def __post_init__(self):
        if self.accept != (self.reason == RejectReason.none):
            raise ValueError("reason must be 'none' exactly when accepting")


@dataclass(frozen=True)
class Rejection:
    question_id: int
    attempt: int
    reason: RejectReason


@dataclass(frozen=True)
class Backstory:
    id: str
    turns: tuple[InterviewTurn, ...]
    generator_model: str
    seed: int
    token_count: int
    rejections: tuple[Rejection, ...] = field(default=(), compare=False)

    @property
    def transcript(self) -> str:
        return serialize_transcript(self.turns)


class BackstoryError(Exception):
    pass


class RetryExhaustedError(BackstoryError):
    def __init__(self, question_id: int, attempts: int):
        self.question_id = question_id
        self.attempts = attempts
        super().__init__(
            f"question {question_id} rejected on all {attempts} attempts"
        )


def load_question_bank(source: str | Path | None = None) -> list[InterviewQuestion]:
    """Load the interview bank: the built-in ten questions, or one question
    per non-blank line of a plain-text file."""
    if source is None:
        return [InterviewQuestion(i + 1, q) for i, q in enumerate(INTERVIEW_QUESTIONS)]
    lines = [ln.strip() for ln in Path(source).read_text(encoding="utf-8").splitlines()]
    questions = [ln for ln in lines if ln]
    if not questions:
        raise BackstoryError(f"question bank file {source} contains no questions")
    return [InterviewQuestion(i + 1, q) for i, q in enumerate(questions)]


def ablation_bank(n_questions: int) -> list[InterviewQuestion]:
    """First n questions of the default bank (length-ablation prefixes)."""
    if not (1 <= n_questions <= len(INTERVIEW_QUESTIONS)):
        raise ValueError(f"n_questions must be in 1..{len(INTERVIEW_QUESTIONS)}")
    return load_question_bank()[:n_questions]


def serialize_transcript(turns: Sequence[InterviewTurn]) -> str:
    """Render completed turns as 'Question: ...' / 'Answer: ...' blocks.

    Inverse of parse_transcript provided answers contain no line starting
    with 'Question: '; the generation stop sequence and the critic's
    repetition check keep generated answers within that constraint.
    """
    return "\n\n".join(
        f"Question: {t.question.text}\nAnswer: {t.answer}" for t in turns
    )


_BLOCK_RE = re.compile(r"(?m)^Question: ")


def parse_transcript(text: str) -> list[tuple[str, str]]:
    """Recover (question, answer) pairs from a serialized transcript."""
    pairs = []
    chunks = _BLOCK_RE.split(text)
    for chunk in chunks[1:]:
        chunk = chunk.rstrip()
        head, sep, tail = chunk.partition("\nAnswer:")
        if not sep:
            raise BackstoryError("transcript block without an Answer line")
        pairs.append((head.strip(), tail.strip()))
    return pairs


def render_interview_prompt(
    turns_so_far: Sequence[InterviewTurn], next_question: InterviewQuestion
) -> str:
    """Completed Q/A blocks for prior turns, then the next question with an
    open Answer cue for the model to continue."""
    parts = []
    if turns_so_far:
        parts.append(serialize_transcript(turns_so_far))
    parts.append(f"Question: {next_question.text}\nAnswer:")
    return "\n\n".join(parts)


CRITIC_PROMPT_TEMPLATE = """\
You are reviewing a single answer from a first-person interview transcript.
Reject the answer ONLY if it strictly contradicts facts stated earlier in the
transcript, or if it contains artifacts that do not belong in a spoken answer:
interviewer questions or a reversal of speaker roles, a repetition of the
interview question, metadata or markup, or program code. Do not reject an
answer because of its opinions or content.

Transcript so far:
{context}

Candidate answer:
{candidate}

Reply with exactly one line:
VERDICT: ACCEPT
or
VERDICT: REJECT <reason>
where <reason> is one of factual_inconsistency, role_reversal,
question_repetition, metadata_or_code, other_incoherence.
"""

_VERDICT_RE = re.compile(r"VERDICT:\s*(ACCEPT|REJECT)\s*([a-z_]*)", re.IGNORECASE)


def critique_answer(
    candidate: str, transcript_context: str, critic_backend: Backend
) -> CritiqueVerdict:
    """Ask the critic for a binary verdict on one candidate answer.

    An unparseable critic reply counts as an accept: the scheme only rejects
    on an explicit, well-formed REJECT line.
    """
    if not candidate:
        raise ValueError("candidate must be non-empty")
    prompt = CRITIC_PROMPT_TEMPLATE.format(
        context=transcript_context or "(start of interview)", candidate=candidate
    )
    request = CompletionRequest(prompt=prompt, max_tokens=32, temperature=0.0, seed=0)
    reply = complete(request, critic_backend)
    m = _VERDICT_RE.search(reply.text)
    if not m:
        log.warning("unparseable critic reply %r; accepting conservatively", reply.text[:80])
        return CritiqueVerdict(accept=True)
    if m.group(1).upper() == "ACCEPT":
        return CritiqueVerdict(accept=True)
    reason_text = m.group(2).lower()
    try:
        reason = RejectReason(reason_text)
        if reason == RejectReason.none:
            raise ValueError
    except ValueError:
        reason = RejectReason.other_incoherence
    return CritiqueVerdict(accept=False, reason=reason)


def candidate_seed(base_seed: int, question_id: int, attempt: int) -> int:
    """Seed for one generation attempt; fresh per (question, attempt) so
    resampling after a rejection draws a new candidate."""
    return derive_seed(base_seed, "turn", question_id, attempt)


def generate_backstory(
    bank: Sequence[InterviewQuestion],
    generator_backend: Backend,
    critic_backend: Backend | None,
    *,
    backstory_id: str,
    seed: int,
    retry_bound: int = 4,
    max_answer_tokens: int = 512,
    temperature: float = 1.0,
    top_p: float = 1.0,
    generator_model: str = "unknown",
) -> Backstory:
    """Generate one full backstory, question by question.

    Each turn is conditioned on the complete history of prior turns. A
    candidate answer is kept only if the critic accepts it; otherwise it is
    discarded and resampled (a new seed per attempt) up to retry_bound times.
    Passing critic_backend=None disables filtering entirely (the consistency
    ablation's unfiltered arm).
    """
    if retry_bound < 1:
        raise ValueError("retry_bound must be >= 1")
    turns: list[InterviewTurn] = []
    rejections: list[Rejection] = []
    for question in bank:
        accepted = None
        for attempt in range(1, retry_bound + 1):
            prompt = render_interview_prompt(turns, question)
            request = CompletionRequest(
                prompt=prompt,
                max_tokens=max_answer_tokens,
                temperature=temperature,
                top_p=top_p,
                stop_sequences=(DEFAULT_STOP_SEQUENCE,),
                seed=candidate_seed(seed, question.id, attempt),
            )
            candidate = complete(request, generator_backend).text.strip()
            if not candidate:
                verdict = CritiqueVerdict(False, RejectReason.other_incoherence)
            elif critic_backend is None:
                verdict = CritiqueVerdict(True)
            else:
                verdict = critique_answer(
                    candidate, serialize_transcript(turns), critic_backend
                )
            if verdict.accept:
                accepted = InterviewTurn(question, candidate, attempts=attempt)
                break
            rejections.append(Rejection(question.id, attempt, verdict.reason))
            log.debug(
                "backstory %s q%d attempt %d rejected (%s)",
                backstory_id, question.id, attempt, verdict.reason.value,
            )
        if accepted is None:
            raise RetryExhaustedError(question.id, retry_bound)
        turns.append(accepted)
    transcript = serialize_transcript(turns)
    return Backstory(
        id=backstory_id,
        turns=tuple(turns),
        generator_model=generator_model,
        seed=seed,
        token_count=count_tokens(transcript),
        rejections=tuple(rejections),
    )


def backstory_to_record(story: Backstory) -> dict:
    """JSONL record shape for persisted backstories."""
    return {
        "id": story.id,
        "seed": story.seed,
        "generator_model": story.generator_model,
        "turns": [
            {
                "question_id": t.question.id,
                "question": t.question.text,
                "answer": t.answer,
                "attempts": t.attempts,
            }
            for t in story.turns
        ],
    }


def backstory_from_record(record: dict) -> Backstory:
    turns = tuple(
        InterviewTurn(
            InterviewQuestion(t["question_id"], t["question"]),
            t["answer"],
            t["attempts"],
        )
        for t in record["turns"]
    )
    transcript = serialize_transcript(turns)
    return Backstory(
        id=record["id"],
        turns=turns,
        generator_model=record["generator_model"],
        seed=record["seed"],
        token_count=count_tokens(transcript),
    )
