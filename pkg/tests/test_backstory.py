import json
import re

import pytest

from personasim.backstory import (
    INTERVIEW_QUESTIONS,
    Backstory,
    CritiqueVerdict,
    InterviewQuestion,
    InterviewTurn,
    RejectReason,
    RetryExhaustedError,
    ablation_bank,
    backstory_from_record,
    backstory_to_record,
    candidate_seed,
    critique_answer,
    generate_backstory,
    load_question_bank,
    parse_transcript,
    render_interview_prompt,
    serialize_transcript,
)
from personasim.llm import StubBackend

ACCEPT = StubBackend([(".*", "VERDICT: ACCEPT")])


def _always(text):
    return StubBackend([(".*", text)])


# --- question bank ------------------------------------------------------------

def test_default_bank_is_ten_questions_in_order():
    bank = load_question_bank()
    assert len(bank) == 10
    assert [q.id for q in bank] == list(range(1, 11))
    assert bank[0].text.startswith("To start, I would like to begin with a big question")
    assert bank[5].text == "How would you describe your political views?"


def test_custom_bank_file(tmp_path):
    path = tmp_path / "bank.txt"
    path.write_text("first?\nsecond?\n\nthird?\n")
    bank = load_question_bank(path)
    assert [q.text for q in bank] == ["first?", "second?", "third?"]
    assert [q.id for q in bank] == [1, 2, 3]


def test_empty_bank_file_errors(tmp_path):
    path = tmp_path / "bank.txt"
    path.write_text("\n\n")
    with pytest.raises(Exception, match="no questions"):
        load_question_bank(path)


def test_ablation_bank_prefixes():
    assert [q.text for q in ablation_bank(1)] == [INTERVIEW_QUESTIONS[0]]
    assert [q.text for q in ablation_bank(10)] == list(INTERVIEW_QUESTIONS)
    assert [q.id for q in ablation_bank(2)] == [1, 2]
    with pytest.raises(ValueError):
        ablation_bank(0)
    with pytest.raises(ValueError):
        ablation_bank(11)


# --- prompt rendering ---------------------------------------------------------

def test_prompt_base_case():
    q = InterviewQuestion(1, "Who are you?")
    prompt = render_interview_prompt([], q)
    assert prompt == "Question: Who are you?\nAnswer:"


def test_prompt_two_prior_turns():
    turns = [
        InterviewTurn(InterviewQuestion(1, "q one"), "a one"),
        InterviewTurn(InterviewQuestion(2, "q two"), "a two"),
    ]
    prompt = render_interview_prompt(turns, InterviewQuestion(3, "q three"))
    completed = re.findall(r"Question: .*\nAnswer: .+", prompt)
    assert len(completed) == 2
    assert prompt.endswith("Question: q three\nAnswer:")


def test_render_parse_round_trip_independent_parser():
    # oracle: a from-scratch parser written here, not the module's own
    turns = [
        InterviewTurn(InterviewQuestion(1, "What's your story?"), "Long.\n\nTwo paragraphs."),
        InterviewTurn(InterviewQuestion(2, "Anything else?"), "Answer: nested cue stays."),
    ]
    text = serialize_transcript(turns)
    blocks = re.split(r"(?m)^Question: ", text)[1:]
    recovered = []
    for block in blocks:
        q, a = block.split("\nAnswer:", 1)
        recovered.append((q.strip(), a.strip()))
    assert recovered == [(t.question.text, t.answer) for t in turns]
    assert parse_transcript(text) == recovered


# --- critic -------------------------------------------------------------------

def test_critic_rejects_metadata_or_code():
    critic = _always("VERDICT: REJECT metadata_or_code")
    verdict = critique_answer("<div>hello</div>", "", critic)
    assert not verdict.accept
    assert verdict.reason == RejectReason.metadata_or_code


def test_critic_accepts_benign_answer():
    verdict = critique_answer("I grew up on a farm.", "", ACCEPT)
    assert verdict.accept
    assert verdict.reason == RejectReason.none


def test_critic_question_repetition():
    critic = _always("VERDICT: REJECT question_repetition")
    verdict = critique_answer("How would you describe your political views?", "ctx", critic)
    assert verdict.reason == RejectReason.question_repetition


def test_unparseable_critic_reply_counts_as_accept():
    verdict = critique_answer("fine answer", "", _always("I am not sure about this one"))
    assert verdict.accept


def test_unknown_reject_reason_maps_to_other_incoherence():
    verdict = critique_answer("x", "", _always("VERDICT: REJECT gibberish_code"))
    assert verdict.reason == RejectReason.other_incoherence


def test_verdict_invariant():
    with pytest.raises(ValueError):
        CritiqueVerdict(accept=True, reason=RejectReason.role_reversal)
    with pytest.raises(ValueError):
        CritiqueVerdict(accept=False, reason=RejectReason.none)


# --- generation ---------------------------------------------------------------

def _seed_scheduled_generator(base_seed, bank, schedule, retry_bound=6):
    """Stub emitting a rejectable marker for scheduled (question, attempt)
    pairs; depends only on (prompt, seed) via the published seed derivation."""
    marker_seeds = {
        candidate_seed(base_seed, qid, attempt) for qid, attempt in schedule
    }

    def handler(request):
        if request.seed in marker_seeds:
            return "REJECTME spurious artifact"
        return f"clean answer (seed {request.seed})"

    return StubBackend([(".*", handler)])


REJECT_MARKED = StubBackend(
    [
        ("Candidate answer:[\\s\\S]*REJECTME", "VERDICT: REJECT metadata_or_code"),
        (".*", "VERDICT: ACCEPT"),
    ]
)


def test_generate_no_rejections():
    bank = load_question_bank()
    story = generate_backstory(
        bank, _always("A fine answer."), ACCEPT, backstory_id="b1", seed=5
    )
    assert len(story.turns) == 10
    assert all(t.attempts == 1 for t in story.turns)
    assert story.token_count == len(story.transcript.split())


def test_generate_scheduled_rejection_counts():
    bank = load_question_bank()
    generator = _seed_scheduled_generator(42, bank, [(3, 1)])
    story = generate_backstory(
        bank, generator, REJECT_MARKED, backstory_id="b2", seed=42, retry_bound=4
    )
    attempts = [t.attempts for t in story.turns]
    assert attempts[2] == 2
    assert all(a == 1 for i, a in enumerate(attempts) if i != 2)
    assert [r.question_id for r in story.rejections] == [3]


def test_generate_retry_exhaustion_names_question():
    bank = load_question_bank()
    generator = _seed_scheduled_generator(9, bank, [(5, a) for a in range(1, 5)])
    with pytest.raises(RetryExhaustedError) as err:
        generate_backstory(
            bank, generator, REJECT_MARKED, backstory_id="b3", seed=9, retry_bound=4
        )
    assert err.value.question_id == 5
    assert err.value.attempts == 4


def test_generate_empty_answer_counts_as_rejection():
    bank = ablation_bank(1)
    calls = []

    def handler(request):
        calls.append(request.seed)
        return "   " if len(calls) == 1 else "substantive answer"

    story = generate_backstory(
        bank, StubBackend([(".*", handler)]), ACCEPT, backstory_id="b4", seed=1
    )
    assert story.turns[0].attempts == 2
    assert story.rejections[0].reason == RejectReason.other_incoherence


def test_generate_without_critic_accepts_everything():
    bank = ablation_bank(2)
    story = generate_backstory(
        bank, _always("anything at all"), None, backstory_id="b5", seed=2
    )
    assert all(t.attempts == 1 for t in story.turns)


def test_generate_bit_reproducible():
    bank = load_question_bank()
    gen = StubBackend([(".*", {"variants": [f"text {i}" for i in range(7)]})])
    a = generate_backstory(bank, gen, ACCEPT, backstory_id="b6", seed=77)
    b = generate_backstory(bank, gen, ACCEPT, backstory_id="b6", seed=77)
    assert json.dumps(backstory_to_record(a), sort_keys=True) == json.dumps(
        backstory_to_record(b), sort_keys=True
    )


def test_turn_prompts_contain_full_history():
    bank = ablation_bank(3)
    prompts = []

    def handler(request):
        prompts.append(request.prompt)
        return "answer"

    generate_backstory(bank, StubBackend([(".*", handler)]), ACCEPT, backstory_id="b7", seed=0)
    assert prompts[0].count("Question:") == 1
    assert prompts[1].count("Question:") == 2
    assert prompts[2].count("Question:") == 3
    assert "answer" in prompts[2]


def test_critic_idempotent_on_accepted_turns():
    # every persisted answer re-passes the same scripted critic
    bank = load_question_bank()
    generator = _seed_scheduled_generator(3, bank, [(1, 1), (4, 1), (4, 2)])
    story = generate_backstory(
        bank, generator, REJECT_MARKED, backstory_id="b8", seed=3, retry_bound=5
    )
    for turn in story.turns:
        assert "REJECTME" not in turn.answer
        assert critique_answer(turn.answer, "", REJECT_MARKED).accept


def test_attempts_never_exceed_retry_bound():
    bank = load_question_bank()
    for seed in range(5):
        generator = _seed_scheduled_generator(seed, bank, [(2, 1), (2, 2), (7, 1)])
        story = generate_backstory(
            bank, generator, REJECT_MARKED, backstory_id=f"b9-{seed}", seed=seed,
            retry_bound=4,
        )
        assert all(t.attempts <= 4 for t in story.turns)


def test_record_round_trip():
    bank = ablation_bank(2)
    story = generate_backstory(
        bank, _always("hello there"), ACCEPT, backstory_id="b10", seed=11,
        generator_model="test-model",
    )
    record = backstory_to_record(story)
    assert set(record) == {"id", "seed", "generator_model", "turns"}
    assert set(record["turns"][0]) == {"question_id", "question", "answer", "attempts"}
    back = backstory_from_record(record)
    assert back.id == story.id
    assert back.turns == story.turns
    assert back.token_count == story.token_count
