"""Acceptance suite: one test per release criterion, each printing a
pass/fail line. Runnable under pytest or standalone:

    pytest tests/test_acceptance.py -v -s
    python tests/test_acceptance.py
"""

import dataclasses
import itertools
import json
import math
import random
import statistics
import time
from pathlib import Path

import numpy as np

from personasim.backstory import (
    candidate_seed,
    critique_answer,
    generate_backstory,
    load_question_bank,
)
from personasim.demographics import (
    TRAIT_OPTION_SETS,
    TraitKind,
    annotate,
    sample_trait_distribution,
)
from personasim.llm import StubBackend
from personasim.matching import WeightMatrix, hungarian_match
from personasim.metrics import cohens_d, hostility_gap, wasserstein_1d, welch_test
from personasim.ngrams import NgramSpec, containing_phrase, count_ngrams, tokenize, top_k
from personasim.pipeline import (
    BackendConfig,
    PipelineConfig,
    cmd_ablate,
    cmd_annotate,
    cmd_evaluate,
    cmd_generate,
    cmd_match,
    cmd_survey,
    load_config,
)
from personasim.reference import HUMAN_REFERENCE
from personasim.surveys import Study, load_study, study_bank_checksum

DATA = Path(__file__).parent / "data"

PINNED_CHECKSUMS = {
    Study.atp_w110: "5862fbd483d1a61549e5caff6b3274a871f0e10f887908bd34e620e18766978c",
    Study.subversion: "809e84ee1c7337867aa766abccf19b73f40554ec720893171d438a3107e2d4b5",
    Study.meta_prejudice: "6d5430f560706208df0b0e30092ae25655492b29880f8e30a4d49a44f9f6fd02",
}


def _report(name: str):
    print(f"PASS {name}")


# --- criterion 1: matching oracle -------------------------------------------------


def criterion_1_matching_oracle():
    started = time.perf_counter()
    rng = random.Random(20240601)

    def brute_force(w):
        n, m = len(w), len(w[0])
        return max(
            sum(w[i][p[i]] for i in range(n))
            for p in itertools.permutations(range(m), n)
        )

    def solve(w):
        arr = np.array(w, dtype=float)
        matrix = WeightMatrix(
            tuple(f"h{i}" for i in range(arr.shape[0])),
            tuple(f"p{j}" for j in range(arr.shape[1])),
            arr,
        )
        return hungarian_match(matrix)

    for case in range(200):
        n = rng.randint(1, 7)
        m = rng.randint(n, 8)
        w = [[rng.random() for _ in range(m)] for _ in range(n)]
        result = solve(w)
        assert result.total_weight == brute_force(w), f"case {case} ({n}x{m})"

    # constructed instance where the greedy row-by-row pick is suboptimal
    w = [[1.0, 0.9, 0.0], [1.0, 0.0, 0.0], [0.0, 0.8, 0.7]]
    taken = []
    for row in w:
        j = max((j for j in range(3) if j not in taken), key=lambda j: row[j])
        taken.append(j)
    greedy_total = sum(w[i][taken[i]] for i in range(3))
    result = solve(w)
    assert result.total_weight == brute_force(w)
    assert abs(result.total_weight - 2.6) < 1e-12
    assert result.total_weight > greedy_total

    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"matching oracle took {elapsed:.2f}s"
    _report("criterion 1: hungarian matching equals brute force on 200 instances")


# --- criterion 2: transport oracle -------------------------------------------------


def criterion_2_transport_oracle():
    from scipy.optimize import linprog

    started = time.perf_counter()
    rng = random.Random(7)

    def lp_transport(p, q, positions):
        k = len(p)
        x = np.asarray(positions, dtype=float)
        span = x.max() - x.min()
        xn = (x - x.min()) / span if span > 0 else x * 0.0
        cost = np.abs(xn[:, None] - xn[None, :]).reshape(-1)
        a_eq, b_eq = [], []
        for i in range(k):
            row = np.zeros(k * k)
            row[i * k : (i + 1) * k] = 1.0
            a_eq.append(row)
            b_eq.append(p[i])
        for j in range(k):
            col = np.zeros(k * k)
            col[j::k] = 1.0
            a_eq.append(col)
            b_eq.append(q[j])
        res = linprog(cost, A_eq=np.array(a_eq), b_eq=np.array(b_eq),
                      bounds=(0, None), method="highs")
        assert res.success
        return res.fun

    def rand_dist(k):
        raw = [rng.random() for _ in range(k)]
        s = sum(raw)
        return [v / s for v in raw]

    for case in range(500):
        k = rng.choice([4, 5])
        p, q = rand_dist(k), rand_dist(k)
        positions = list(range(1, k + 1))
        ours = wasserstein_1d(p, q, positions)
        assert abs(ours - lp_transport(p, q, positions)) < 1e-9, f"case {case}"

    for _ in range(100):
        k = rng.choice([4, 5])
        positions = list(range(1, k + 1))
        p, q, r = rand_dist(k), rand_dist(k), rand_dist(k)
        assert wasserstein_1d(p, p, positions) == 0.0
        assert abs(
            wasserstein_1d(p, q, positions) - wasserstein_1d(q, p, positions)
        ) < 1e-12
        assert (
            wasserstein_1d(p, q, positions)
            <= wasserstein_1d(p, r, positions) + wasserstein_1d(r, q, positions) + 1e-9
        )

    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"transport oracle took {elapsed:.2f}s"
    _report("criterion 2: wasserstein matches LP transport; metric axioms hold")


# --- criterion 3: statistics oracle -------------------------------------------------


def criterion_3_statistics_oracle():
    rng = random.Random(13)

    def d_oracle(a, b):
        na, nb = len(a), len(b)
        pooled = math.sqrt(
            ((na - 1) * statistics.variance(a) + (nb - 1) * statistics.variance(b))
            / (na + nb - 2)
        )
        return (statistics.fmean(a) - statistics.fmean(b)) / pooled

    def t_oracle(a, b):
        va, vb = statistics.variance(a), statistics.variance(b)
        return (statistics.fmean(a) - statistics.fmean(b)) / math.sqrt(
            va / len(a) + vb / len(b)
        )

    for case in range(100):
        a = [rng.gauss(0, 1) for _ in range(rng.randint(2, 40))]
        b = [rng.gauss(0.3, 1.7) for _ in range(rng.randint(2, 40))]
        assert abs(cohens_d(a, b) - d_oracle(a, b)) < 1e-12, f"case {case}"
        assert abs(welch_test(a, b).t_stat - t_oracle(a, b)) < 1e-12, f"case {case}"

    # scale invariance, exact: random radix-2 scalings keep every float
    # operation exact, making d's mathematical scale invariance bit-testable
    a = [rng.gauss(0, 1) for _ in range(15)]
    b = [rng.gauss(1, 2) for _ in range(12)]
    base = cohens_d(a, b)
    for _ in range(10):
        c = 2.0 ** rng.randint(-8, 8)
        assert cohens_d([c * x for x in a], [c * x for x in b]) == base
    _report("criterion 3: cohens_d / welch_t match textbook oracles; scale invariance exact")


# --- criterion 4: paper constants -------------------------------------------------


def criterion_4_reference_constants():
    banks = {s: load_study(s) for s in Study}
    assert len(banks[Study.atp_w110]) == 10
    assert len(banks[Study.subversion]) == 24
    assert len(banks[Study.meta_prejudice]) == 6
    assert all(len(q.options) == 5 for q in banks[Study.atp_w110])
    assert all(
        q.options == (("A", "Never"), ("B", "Probably Not"), ("C", "Probably"),
                      ("D", "Definitely"))
        for q in banks[Study.subversion]
    )
    assert all(
        q.options == (("A", "Very cold"), ("B", "Cold"), ("C", "Neutral"),
                      ("D", "Warm"), ("E", "Very warm"))
        for q in banks[Study.meta_prejudice]
    )
    moral = banks[Study.atp_w110][0]
    assert moral.text == "Compared to other Americans, would you say Democrats are..."
    assert [lab for _, lab in moral.options] == [
        "A lot more moral", "Somewhat more moral", "About the same",
        "Somewhat more immoral", "A lot more immoral",
    ]
    for study, expected in PINNED_CHECKSUMS.items():
        assert study_bank_checksum(study) == expected, study

    expected_rows = {
        ("atp_w110", "democrat"): (1.630, 2.208),
        ("atp_w110", "republican"): (1.606, 2.263),
        ("subversion", "democrat"): (0.445, 1.887),
        ("subversion", "republican"): (0.398, 1.951),
        ("meta_prejudice", "democrat"): (1.091, 0.761),
        ("meta_prejudice", "republican"): (1.182, 0.768),
    }
    for key, (delta, d) in expected_rows.items():
        row = HUMAN_REFERENCE[key]
        assert (row.delta, row.cohens_d) == (delta, d), key
    _report("criterion 4: study banks and human baseline rows match the published constants")


# --- criterion 5: golden end-to-end run ----------------------------------------------


def criterion_5_golden_run(tmp: Path, monkeypatch_env):
    started = time.perf_counter()
    golden = (DATA / "golden_report.txt").read_bytes()
    for workers, label in ((1, "serial"), (4, "parallel")):
        root = tmp / f"golden_{label}"
        monkeypatch_env("E2E_STORAGE", str(root))
        cfg = dataclasses.replace(
            load_config(DATA / "e2e_config.yaml"), workers=workers
        )
        cmd_generate(cfg, 4)
        cmd_annotate(cfg)
        cmd_match(cfg, DATA / "e2e_roster.csv")
        for study in cfg.studies:
            cmd_survey(cfg, study)
        assert cmd_evaluate(cfg)
        produced = (cfg.storage_root / "report.txt").read_bytes()
        assert produced == golden, f"report bytes differ under {label} execution"
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"golden run took {elapsed:.2f}s"
    _report("criterion 5: stub pipeline reproduces the golden report byte-for-byte")


# --- criterion 6: rejection-sampling contract ------------------------------------------


def criterion_6_rejection_contract():
    bank = load_question_bank()
    schedule = {(2, 1), (6, 1), (6, 2), (9, 1)}  # (question, attempt) -> emit marker
    base_seed = 314
    marker_seeds = {candidate_seed(base_seed, q, a) for q, a in schedule}

    def generator(request):
        if request.seed in marker_seeds:
            return "Here you go ``` <html>stray</html> ```"
        return f"A clean conversational answer (seed {request.seed})."

    critic = StubBackend(
        [
            ("Candidate answer:[\\s\\S]*```", "VERDICT: REJECT metadata_or_code"),
            ("You are reviewing a single answer", "VERDICT: ACCEPT"),
        ]
    )
    story = generate_backstory(
        bank, StubBackend([(".*", generator)]), critic,
        backstory_id="rj", seed=base_seed, retry_bound=5,
    )
    record = json.dumps(
        {"turns": [{"answer": t.answer} for t in story.turns]}
    )
    assert "```" not in record
    expected_attempts = {qid: 1 for qid in range(1, 11)}
    expected_attempts[2] = 2
    expected_attempts[6] = 3
    expected_attempts[9] = 2
    actual = {t.question.id: t.attempts for t in story.turns}
    assert actual == expected_attempts
    assert all(critique_answer(t.answer, "", critic).accept for t in story.turns)
    _report("criterion 6: critic-gated generation matches the scripted rejection schedule")


# --- criterion 7: annotation contract ---------------------------------------------------


def criterion_7_annotation_contract():
    from personasim.backstory import Backstory, InterviewQuestion, InterviewTurn

    turns = (
        InterviewTurn(InterviewQuestion(1, "tell me about yourself"),
                      "I am a proud Democrat from a river town."),
    )
    story = Backstory("an", turns, "stub", 0, 9)
    backend = StubBackend(
        [
            ("mention about political party",
             'Evidence: "I am a proud Democrat" Answer: (A)'),
            ("What does the person's essay above mention", "Was not mentioned"),
            ("What is your age", {"variants": ["(B) 25-34", "(C) 35-44", "(B) 25-34"]}),
            ("What is your gender", {"variants": ["(A) Male", "(B) Female"]}),
            ("highest level of education", {"variants": ["(E) Bachelor's degree"]}),
            ("annual household income", {"variants": ["(F) $50,000 to $59,999"]}),
            ("racial or ethnic groups", {"variants": ["(G) White or European"]}),
        ]
    )
    profile = annotate(
        story, extractor_backend=backend, sampler_backend=backend, n_samples=40
    )
    party = profile.distributions[TraitKind.party]
    assert party.probabilities == {"A": 1.0} and party.support_count == 0
    for trait in (TraitKind.age, TraitKind.gender, TraitKind.education,
                  TraitKind.income, TraitKind.race_ethnicity):
        dist = profile.distributions[trait]
        assert dist.support_count == 40
        for p in dist.probabilities.values():
            count = p * dist.support_count
            assert abs(count - round(count)) < 1e-9

    # direct stage-2 run, same integer-count property
    dist = sample_trait_distribution(story, TraitKind.age, backend, n_samples=40)
    assert sum(round(p * dist.support_count) for p in dist.probabilities.values()) == 40

    # identical ingroup/outgroup score fixtures collapse the gap
    questions = load_study(Study.atp_w110)
    scores, parties = {}, {}
    for party_name in ("democrat", "republican"):
        for i in range(4):
            rid = f"{party_name[:3]}{i}"
            parties[rid] = party_name
            for q in questions:
                scores[(rid, q.id)] = 0.5
    gap = hostility_gap(scores, parties, "democrat")
    assert gap.delta == 0.0 and gap.cohens_d == 0.0
    _report("criterion 7: one-hot stage-1, integer-count stage-2, null gap fixtures")


# --- criterion 8: n-gram exactness ---------------------------------------------------


def criterion_8_ngram_exactness(tmp: Path):
    from collections import Counter

    started = time.perf_counter()
    rng = random.Random(273)
    vocab = [f"w{i}" for i in range(40)] + [",", ".", "U.S."]
    docs = [
        " ".join(rng.choice(vocab) for _ in range(rng.randint(0, 80)))
        for _ in range(1000)
    ]
    corpus = tmp / "synthetic.txt"
    corpus.write_text("\n".join(docs) + "\n", encoding="utf-8")

    def naive(n):
        counter = Counter()
        for doc in docs:
            toks = tokenize(doc)
            for i in range(len(toks) - n + 1):
                counter[tuple(toks[i : i + n])] += 1
        return counter

    for n in (2, 5, 10):
        oracle = naive(n)
        tables = {
            w: count_ngrams(corpus, NgramSpec(n=n), workers=w, spill_threshold=1000)
            for w in (1, 4, 8)
        }
        for w, table in tables.items():
            assert table.counts == dict(oracle), f"n={n} workers={w}"
            table.check_conservation()
        ranked = top_k(tables[1], 25)
        assert ranked == sorted(oracle.items(), key=lambda kv: (-kv[1], kv[0]))[:25]

    phrase = "w1 w2"
    by_workers = {
        w: containing_phrase(corpus, phrase, NgramSpec(n=5), workers=w,
                             spill_threshold=1000)
        for w in (1, 4, 8)
    }
    oracle5 = naive(5)
    expected = {
        g: c for g, c in oracle5.items()
        if any(g[i : i + 2] == ("w1", "w2") for i in range(4))
    }
    expected_ranked = sorted(expected.items(), key=lambda kv: (-kv[1], kv[0]))
    for w, ranked in by_workers.items():
        assert ranked == expected_ranked, f"workers={w}"

    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"n-gram check took {elapsed:.2f}s"
    _report("criterion 8: spill/merge counts exact, worker-invariant, oracle-ranked")


# --- criterion 9: ablation harness ---------------------------------------------------


def criterion_9_ablation_harness(tmp: Path, monkeypatch_env):
    monkeypatch_env("E2E_STORAGE", str(tmp / "ablate_run"))
    cfg = load_config(DATA / "e2e_config.yaml")
    rows = cmd_ablate(cfg, "length", [1, 2, 5, 10], count=3)
    words = [row["mean_words"] for row in rows]
    assert all(a < b for a, b in zip(words, words[1:])), words

    generator = BackendConfig(
        kind="stub",
        script=(
            {
                "pattern": "\\nAnswer:$|^Question: [^\\n]*\\nAnswer:$",
                "variants": [
                    "A plain answer about daily life and family.",
                    "```css .stray { color: red } ```",
                    "Another ordinary answer about work in town.",
                ],
            },
        ),
    )
    critic = BackendConfig(
        kind="stub",
        script=(
            {"pattern": "Candidate answer:[\\s\\S]*```",
             "text": "VERDICT: REJECT metadata_or_code"},
            {"pattern": "You are reviewing a single answer", "text": "VERDICT: ACCEPT"},
        ),
    )
    marker_cfg = PipelineConfig(
        storage_root=tmp / "consistency_run",
        seed=5,
        retry_bound=8,
        count=3,
        backends={"generator": generator, "critic": critic},
    )
    rows = cmd_ablate(marker_cfg, "consistency", ["critic_on", "critic_off"])
    by_label = {row["level"]: row for row in rows}
    assert by_label["critic_on"]["artifact_sha256"] != by_label["critic_off"]["artifact_sha256"]
    on_text = (marker_cfg.storage_root / "ablate" / "consistency_critic_on"
               / "backstories.jsonl").read_text()
    assert "```" not in on_text
    assert by_label["critic_on"]["rejections"] > 0
    _report("criterion 9: length sweep word counts increase; critic arms diverge")


# --- pytest wiring --------------------------------------------------------------------


def test_criterion_1_matching_oracle():
    criterion_1_matching_oracle()


def test_criterion_2_transport_oracle():
    criterion_2_transport_oracle()


def test_criterion_3_statistics_oracle():
    criterion_3_statistics_oracle()


def test_criterion_4_reference_constants():
    criterion_4_reference_constants()


def test_criterion_5_golden_run(tmp_path, monkeypatch):
    criterion_5_golden_run(tmp_path, monkeypatch.setenv)


def test_criterion_6_rejection_contract():
    criterion_6_rejection_contract()


def test_criterion_7_annotation_contract():
    criterion_7_annotation_contract()


def test_criterion_8_ngram_exactness(tmp_path):
    criterion_8_ngram_exactness(tmp_path)


def test_criterion_9_ablation_harness(tmp_path, monkeypatch):
    criterion_9_ablation_harness(tmp_path, monkeypatch.setenv)


def main() -> int:
    import os
    import tempfile

    failures = 0
    with tempfile.TemporaryDirectory() as tmpdir:
        tmp = Path(tmpdir)

        def setenv(name, value):
            os.environ[name] = value

        criteria = [
            ("criterion 1", criterion_1_matching_oracle, ()),
            ("criterion 2", criterion_2_transport_oracle, ()),
            ("criterion 3", criterion_3_statistics_oracle, ()),
            ("criterion 4", criterion_4_reference_constants, ()),
            ("criterion 5", criterion_5_golden_run, (tmp / "c5", setenv)),
            ("criterion 6", criterion_6_rejection_contract, ()),
            ("criterion 7", criterion_7_annotation_contract, ()),
            ("criterion 8", criterion_8_ngram_exactness, (tmp / "c8",)),
            ("criterion 9", criterion_9_ablation_harness, (tmp / "c9", setenv)),
        ]
        for name, fn, args in criteria:
            for arg in args:
                if isinstance(arg, Path):
                    arg.mkdir(parents=True, exist_ok=True)
            try:
                fn(*args)
            except Exception as exc:  # print FAIL line, keep going
                failures += 1
                print(f"FAIL {name}: {exc}")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
