"""Generate interview-transcript backstories against a scripted stub.

Walks through the core generation loop: the fixed ten-question interview
bank, turn-by-turn prompting with full history, and the critic that rejects
artifact-laden candidates so they get resampled with a fresh seed.
"""

from personasim import StubBackend, generate_backstory, load_question_bank
from personasim.backstory import render_interview_prompt

bank = load_question_bank()
print("interview bank:")
for q in bank:
    print(f"  {q.id:2d}. {q.text[:72]}{'...' if len(q.text) > 72 else ''}")

# the prompt for turn 3 carries both completed turns before the open cue
print("\nprompt shape after two answered turns:")
from personasim.backstory import InterviewTurn

turns = [
    InterviewTurn(bank[0], "I grew up outside Toledo, the youngest of four."),
    InterviewTurn(bank[1], "Choosing night school over the road crew changed everything."),
]
print(render_interview_prompt(turns, bank[2])[-400:])

# a generator that occasionally emits stray markup, and a critic that
# rejects any candidate containing a code fence
generator = StubBackend(
    [
        (
            "\\nAnswer:$",
            {
                "variants": [
                    "A calm, ordinary answer about family and work.",
                    "``` <div>page footer</div> ```",
                    "Another grounded answer about the neighborhood.",
                    "A reflective answer about health and routine.",
                ]
            },
        )
    ]
)
critic = StubBackend(
    [
        ("Candidate answer:[\\s\\S]*```", "VERDICT: REJECT metadata_or_code"),
        ("You are reviewing a single answer", "VERDICT: ACCEPT"),
    ]
)

story = generate_backstory(
    bank, generator, critic, backstory_id="demo-0", seed=12345, retry_bound=6
)
print(f"\ngenerated backstory: {len(story.turns)} turns, {story.token_count} words")
print("attempt counts per turn:", [t.attempts for t in story.turns])
print("rejections:", [(r.question_id, r.reason.value) for r in story.rejections])
assert all("```" not in t.answer for t in story.turns)
print("no accepted answer contains the rejected marker")
