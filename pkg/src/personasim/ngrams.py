"""Exact n-gram counting and phrase-anchored search over text corpora.

Counting streams over documents, spills sorted partial tables to disk when
the in-memory table grows past a threshold, and k-way merges everything at
the end, so memory stays bounded while counts remain exact. Results are
independent of worker count and document order.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import logging
import re
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

log = logging.getLogger(__name__)


class NgramError(Exception):
    pass


# Tokenization: whitespace split with punctuation separated into standalone
# tokens. Dotted acronyms ("U.S.") survive as single tokens, as do words with
# internal apostrophes or hyphens ("it's", "hard-working"); every other
# punctuation character becomes its own token. These rules are fixture-pinned.
_TOKEN_RE = re.compile(
    r"(?:[A-Za-z]\.){2,}"                 # U.S., e.g.
    r"|\w+(?:['’-]\w+)*"             # words incl. it's / hard-working
    r"|[^\w\s]"                           # any other punctuation, one by one
)


def tokenize(text: str, lowercase: bool = False) -> list[str]:
    if lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class NgramSpec:
    n: int
    tokenizer: str = "whitespace"
    lowercase: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.tokenizer != "whitespace":
            raise ValueError(f"unknown tokenizer {self.tokenizer!r}")


@dataclass
class NgramTable:
    spec: NgramSpec
    counts: dict[tuple[str, ...], int]
    total_tokens: int = 0
    doc_count: int = 0
    skipped_records: int = 0
    window_total: int = 0  # sum over docs of max(0, tokens - n + 1)

    def check_conservation(self) -> None:
        if sum(self.counts.values()) != self.window_total:
            raise NgramError("count conservation violated after merge")


def iter_documents(path: str | Path, fmt: str | None = None) -> Iterator[str | None]:
    """Yield one document per line; None marks a malformed record.

    fmt: "jsonl" (objects with a text field), "txt" (plain lines), or None
    to sniff from the file suffix.
    """
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix in (".jsonl", ".json", ".ndjson") else "txt"
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if fmt == "txt":
                yield line
                continue
            try:
                record = json.loads(line)
                text = record["text"]
                if not isinstance(text, str):
                    raise TypeError
            except (json.JSONDecodeError, KeyError, TypeError):
                yield None
                continue
            yield text


def _doc_windows(tokens: Sequence[str], n: int) -> Iterable[tuple[str, ...]]:
    for i in range(len(tokens) - n + 1):
        yield tuple(tokens[i : i + n])


def _contains_subseq(window: tuple[str, ...], phrase: tuple[str, ...]) -> bool:
    span = len(phrase)
    return any(window[i : i + span] == phrase for i in range(len(window) - span + 1))


_KEY_SEP = " "  # tokens never contain whitespace, so a space join is lossless
_COUNT_SEP = "\t"


class _SpillingCounter:
    """Counter that flushes sorted (key, count) snapshots to temp files."""

    def __init__(self, spill_threshold: int, tmpdir: str):
        self.spill_threshold = spill_threshold
        self.tmpdir = tmpdir
        self.counts: dict[tuple[str, ...], int] = {}
        self.spill_paths: list[Path] = []

    def add(self, key: tuple[str, ...]) -> None:
        self.counts[key] = self.counts.get(key, 0) + 1
        if len(self.counts) >= self.spill_threshold:
            self.spill()

    def spill(self) -> None:
        if not self.counts:
            return
        fd, name = tempfile.mkstemp(dir=self.tmpdir, suffix=".spill")
        with io.open(fd, "w", encoding="utf-8", newline="\n") as fh:
            for key in sorted(self.counts):
                fh.write(_KEY_SEP.join(key) + _COUNT_SEP + str(self.counts[key]) + "\n")
        self.spill_paths.append(Path(name))
        self.counts = {}

    def sorted_stream(self) -> Iterator[tuple[str, int]]:
        """Single aggregated stream of (joined key, count), key-sorted."""

        def read_spill(p: Path) -> Iterator[tuple[str, int]]:
            with open(p, "r", encoding="utf-8") as fh:
                for line in fh:
                    key, _, count = line.rstrip("\n").rpartition(_COUNT_SEP)
                    yield key, int(count)

        streams: list[Iterator[tuple[str, int]]] = [read_spill(p) for p in self.spill_paths]
        streams.append(
            (_KEY_SEP.join(k), c) for k, c in sorted(self.counts.items())
        )
        return heapq.merge(*streams, key=lambda kv: kv[0])


def _merge_streams(
    streams: Sequence[Iterator[tuple[str, int]]]
) -> Iterator[tuple[str, int]]:
    merged = heapq.merge(*streams, key=lambda kv: kv[0])
    current_key: str | None = None
    current_count = 0
    for key, count in merged:
        if key == current_key:
            current_count += count
        else:
            if current_key is not None:
                yield current_key, current_count
            current_key, current_count = key, count
    if current_key is not None:
        yield current_key, current_count


def count_ngrams(
    corpus_path: str | Path,
    spec: NgramSpec,
    *,
    workers: int = 1,
    spill_threshold: int = 500_000,
    fmt: str | None = None,
    phrase: Sequence[str] | None = None,
) -> NgramTable:
    """Exact n-gram counts over a corpus file.

    Documents are dispatched to worker-local counters (each with its own
    spill files); the final table is a key-sorted merge of every partial
    stream, so the result is identical for any worker count. When phrase is
    given, only windows containing it as a contiguous token run are counted.
    """
    corpus_path = Path(corpus_path)
    if not corpus_path.exists():
        raise NgramError(f"corpus not readable: {corpus_path}")
    phrase_t = tuple(phrase) if phrase else None
    if phrase_t is not None and len(phrase_t) > spec.n:
        raise NgramError(f"phrase has {len(phrase_t)} tokens, longer than n={spec.n}")

    table = NgramTable(spec, {})
    with tempfile.TemporaryDirectory(prefix="ngrams_") as tmpdir:
        # one counter per pool thread, created lazily; a pool thread only ever
        # touches its own counter, so counting needs no locks
        counters: dict[int, _SpillingCounter] = {}
        counters_lock = threading.Lock()

        def local_counter() -> _SpillingCounter:
            ident = threading.get_ident()
            with counters_lock:
                if ident not in counters:
                    counters[ident] = _SpillingCounter(spill_threshold, tmpdir)
                return counters[ident]

        def process(doc: str) -> tuple[int, int]:
            counter = local_counter()
            tokens = tokenize(doc, spec.lowercase)
            for window in _doc_windows(tokens, spec.n):
                if phrase_t is not None and not _contains_subseq(window, phrase_t):
                    continue
                counter.add(window)
            return len(tokens), max(0, len(tokens) - spec.n + 1)

        def process_batch(batch_docs: list[str]) -> tuple[int, int, int]:
            tok = win = 0
            for d in batch_docs:
                t, w = process(d)
                tok += t
                win += w
            return tok, win, len(batch_docs)

        docs = iter_documents(corpus_path, fmt)
        if workers <= 1:
            for doc in docs:
                if doc is None:
                    table.skipped_records += 1
                    continue
                ntok, nwin = process(doc)
                table.total_tokens += ntok
                table.doc_count += 1
                table.window_total += nwin
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                batch: list[str] = []
                futures = []
                for doc in docs:
                    if doc is None:
                        table.skipped_records += 1
                        continue
                    batch.append(doc)
                    if len(batch) >= 64:
                        futures.append(pool.submit(process_batch, batch))
                        batch = []
                if batch:
                    futures.append(pool.submit(process_batch, batch))
                for future in futures:
                    tok, win, ndocs = future.result()
                    table.total_tokens += tok
                    table.window_total += win
                    table.doc_count += ndocs

        streams = [c.sorted_stream() for c in counters.values()]
        for joined, count in _merge_streams(streams):
            table.counts[tuple(joined.split(_KEY_SEP))] = count

    if table.skipped_records:
        log.warning("skipped %d malformed records in %s", table.skipped_records, corpus_path)
    if phrase_t is None:
        table.check_conservation()
    return table


def top_k(table: NgramTable, k: int) -> list[tuple[tuple[str, ...], int]]:
    """Top-k n-grams by count, descending; ties by lexicographic n-gram."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(table.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def containing_phrase(
    corpus_path: str | Path,
    phrase: str,
    spec: NgramSpec,
    *,
    workers: int = 1,
    spill_threshold: int = 500_000,
    fmt: str | None = None,
) -> list[tuple[tuple[str, ...], int]]:
    """All n-grams containing the phrase as a contiguous token run, ranked
    like top_k (full list)."""
    phrase_tokens = tuple(tokenize(phrase, spec.lowercase))
    if not phrase_tokens:
        raise NgramError("phrase tokenizes to nothing")
    table = count_ngrams(
        corpus_path, spec, workers=workers, spill_threshold=spill_threshold,
        fmt=fmt, phrase=phrase_tokens,
    )
    ranked = sorted(table.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked


@dataclass
class CorpusComparison:
    spec: NgramSpec
    k: int
    top_a: list[tuple[tuple[str, ...], int]]
    top_b: list[tuple[tuple[str, ...], int]]
    cross_counts: list[tuple[tuple[str, ...], int, int]] = field(default_factory=list)
    # cross_counts: (ngram from a's top-k, count in a, count in b)


def compare_corpora(table_a: NgramTable, table_b: NgramTable, k: int) -> CorpusComparison:
    """Side-by-side top-k plus a's top-k looked up in b."""
    if table_a.spec != table_b.spec:
        raise NgramError(f"spec mismatch: {table_a.spec} vs {table_b.spec}")
    top_a = top_k(table_a, k)
    top_b = top_k(table_b, k)
    cross = [(g, c, table_b.counts.get(g, 0)) for g, c in top_a]
    return CorpusComparison(table_a.spec, k, top_a, top_b, cross)


def render_comparison_text(cmp: CorpusComparison) -> str:
    lines = [f"top-{cmp.k} {cmp.spec.n}-grams (corpus A | corpus B | A's top in B)"]
    width = max(
        [len(" ".join(g)) for g, _ in cmp.top_a + cmp.top_b] + [8]
    )
    lines.append(f"{'ngram':<{width}}  {'count_a':>8}  {'count_b':>8}")
    for (gram, ca, cb) in cmp.cross_counts:
        lines.append(f"{' '.join(gram):<{width}}  {ca:>8}  {cb:>8}")
    lines.append("")
    lines.append("corpus B top-k:")
    for gram, count in cmp.top_b:
        lines.append(f"{' '.join(gram):<{width}}  {count:>8}")
    return "\n".join(lines)


def render_table_text(ranked: Sequence[tuple[tuple[str, ...], int]]) -> str:
    if not ranked:
        return "(empty)"
    width = max(len(" ".join(g)) for g, _ in ranked)
    return "\n".join(f"{' '.join(g):<{width}}  {c:>8}" for g, c in ranked)


def render_table_csv(ranked: Sequence[tuple[tuple[str, ...], int]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ngram", "count"])
    for gram, count in ranked:
        writer.writerow([" ".join(gram), count])
    return buf.getvalue()
