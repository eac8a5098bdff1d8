"""Uniform client for text-completion backends.

Two backend kinds are provided: a remote HTTP completion endpoint and an
in-process scripted stub keyed by (prompt pattern, seed). Every downstream
stage is written against the same interface so the whole pipeline runs
offline against stubs.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

from .util import derive_seed

log = logging.getLogger(__name__)

FINISH_STOP = "stop"
FINISH_LENGTH = "length"
FINISH_ERROR = "error"


class BackendError(Exception):
    """Base class for backend failures."""


class TransportError(BackendError):
    """Network-level failure that persisted past the retry bound."""


class MalformedResponseError(BackendError):
    """The endpoint replied with something we cannot interpret."""


class ContextLengthError(BackendError):
    """The prompt exceeded the model's context window."""


class OptionScoringError(BackendError):
    """Option scoring was requested but could not be satisfied."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int = 512
    temperature: float = 1.0
    top_p: float = 1.0
    stop_sequences: tuple[str, ...] = ()
    seed: int | None = None
    want_token_scores: bool = False
    candidate_tokens: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError("top_p must be in (0, 1]")
        if self.want_token_scores and self.candidate_tokens is not None:
            if len(self.candidate_tokens) == 0:
                raise ValueError("candidate_tokens must be non-empty when scoring options")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    token_scores: Mapping[str, float] | None = None
    finish_reason: str = FINISH_STOP

    def __post_init__(self):
        if self.token_scores is not None:
            total = 0.0
            for tok, p in self.token_scores.items():
                if p < 0:
                    raise ValueError(f"negative score for token {tok!r}")
                total += p
            if total > 1.0 + 1e-9:
                raise ValueError(f"raw token scores sum to {total} > 1")


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


def _apply_stops_and_length(text: str, request: CompletionRequest) -> CompletionResponse:
    """Truncate at the earliest stop sequence, then enforce max_tokens."""
    finish = FINISH_STOP
    cut = len(text)
    for stop in request.stop_sequences:
        idx = text.find(stop)
        if idx != -1:
            cut = min(cut, idx)
    text = text[:cut]
    tokens = text.split()
    if len(tokens) > request.max_tokens:
        # keep original spacing up to the max_tokens-th token
        count, pos = 0, 0
        for m in re.finditer(r"\S+", text):
            count += 1
            if count == request.max_tokens:
                pos = m.end()
                break
        text = text[:pos]
        finish = FINISH_LENGTH
    return CompletionResponse(text=text, finish_reason=finish)


@dataclass
class StubRule:
    """One scripted behavior: a regex over the prompt plus a handler.

    Handler forms:
      * str -- fixed completion text
      * {"text": ...} -- same as str
      * {"variants": [...]} -- text chosen by seed % len(variants)
      * {"token_scores": {...}} -- raw option scores (sum <= 1)
      * callable(request) -> str | CompletionResponse
    """

    pattern: str
    handler: object
    _compiled: re.Pattern = field(init=False, repr=False)

    def __post_init__(self):
        self._compiled = re.compile(self.pattern, re.DOTALL)


class StubBackend:
    """Deterministic scripted backend.

    Responses depend only on (prompt, seed): the first rule whose pattern
    matches the prompt decides the reply, and seed-indexed variants make the
    stub deterministic under any thread interleaving.
    """

    def __init__(
        self,
        rules: Sequence[StubRule | tuple[str, object]],
        *,
        record_calls: bool = False,
    ):
        self.rules = [r if isinstance(r, StubRule) else StubRule(*r) for r in rules]
        self._lock = threading.Lock()
        self.record_calls = record_calls
        self.calls: list[tuple[str, int | None]] = []

    @classmethod
    def from_script(cls, script: Sequence[Mapping]) -> "StubBackend":
        """Build from declarative config entries {pattern, text|variants|token_scores}."""
        rules = []
        for entry in script:
            entry = dict(entry)
            pattern = entry.pop("pattern")
            rules.append(StubRule(pattern, entry))
        return cls(rules)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if self.record_calls:
            with self._lock:
                self.calls.append((request.prompt, request.seed))
        for rule in self.rules:
            if rule._compiled.search(request.prompt):
                return self._dispatch(rule.handler, request)
        raise MalformedResponseError(
            f"stub has no rule matching prompt starting {request.prompt[:80]!r}"
        )

    def _dispatch(self, handler, request: CompletionRequest) -> CompletionResponse:
        if callable(handler):
            out = handler(request)
        else:
            out = handler
        if isinstance(out, CompletionResponse):
            return out
        if isinstance(out, str):
            return _apply_stops_and_length(out, request)
        if isinstance(out, Mapping):
            if "token_scores" in out:
                return CompletionResponse(text="", token_scores=dict(out["token_scores"]))
            if "variants" in out:
                variants = list(out["variants"])
                seed = request.seed if request.seed is not None else 0
                return _apply_stops_and_length(variants[seed % len(variants)], request)
            if "text" in out:
                return _apply_stops_and_length(str(out["text"]), request)
        raise MalformedResponseError(f"stub handler produced unsupported value: {out!r}")


class HTTPBackend:
    """Client for a plain completions endpoint.

    POSTs {model, prompt, max_tokens, temperature, top_p, stop, seed,
    logprobs} and reads back generated text plus optional per-token
    log-probabilities. Transient transport failures are retried with
    exponential backoff up to a configured bound; the number of in-flight
    requests is capped so batch stages cannot stampede the endpoint.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 4,
        backoff_base: float = 0.5,
        max_in_flight: int = 8,
        top_logprobs: int = 20,
        transport: Callable | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.top_logprobs = top_logprobs
        self._sem = threading.Semaphore(max_in_flight)
        self._transport = transport or self._requests_transport

    def _requests_transport(self, payload: dict) -> tuple[int, object]:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        try:
            body = resp.json()
        except ValueError:
            body = resp.text
        return resp.status_code, body

    def _payload(self, request: CompletionRequest) -> dict:
        payload = {
            "model": self.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        if request.seed is not None:
            payload["seed"] = request.seed
        if request.want_token_scores:
            payload["logprobs"] = self.top_logprobs
        return payload

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        payload = self._payload(request)
        last_exc: Exception | None = None
        with self._sem:
            for attempt in range(self.max_retries + 1):
                try:
                    status, body = self._transport(payload)
                except TransportError as exc:
                    last_exc = exc
                else:
                    if status == 200:
                        return self._parse_body(body, request)
                    if status in (408, 429) or status >= 500:
                        last_exc = TransportError(f"HTTP {status}: {str(body)[:200]}")
                    elif status == 400 and _looks_like_context_overflow(body):
                        raise ContextLengthError(str(body)[:500])
                    else:
                        raise MalformedResponseError(f"HTTP {status}: {str(body)[:500]}")
                if attempt < self.max_retries:
                    time.sleep(self.backoff_base * (2**attempt))
        raise TransportError(
            f"gave up after {self.max_retries + 1} attempts: {last_exc}"
        )

    def _parse_body(self, body, request: CompletionRequest) -> CompletionResponse:
        if not isinstance(body, Mapping):
            raise MalformedResponseError(f"non-JSON completion body: {str(body)[:200]}")
        try:
            choice = body["choices"][0]
            text = choice.get("text", "")
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected reply shape: {exc}") from exc
        token_scores = None
        if request.want_token_scores:
            token_scores = _first_token_probs(choice, request.candidate_tokens)
        resp = _apply_stops_and_length(text if isinstance(text, str) else "", request)
        finish = choice.get("finish_reason") or resp.finish_reason
        if finish not in (FINISH_STOP, FINISH_LENGTH, FINISH_ERROR):
            finish = resp.finish_reason
        return CompletionResponse(text=resp.text, token_scores=token_scores, finish_reason=finish)


def _looks_like_context_overflow(body) -> bool:
    text = json.dumps(body) if isinstance(body, Mapping) else str(body)
    text = text.lower()
    return "context length" in text or "maximum context" in text or "context window" in text


def _first_token_probs(choice: Mapping, candidates: Sequence[str] | None):
    """Map candidate tokens to first-position probabilities from logprobs."""
    import math

    logprobs = choice.get("logprobs") or {}
    tops = logprobs.get("top_logprobs") or []
    if not tops:
        return None
    first = tops[0]
    if not isinstance(first, Mapping):
        return None
    scores = {}
    for cand in candidates or first.keys():
        lp = first.get(cand)
        if lp is None:
            lp = first.get(" " + cand)
        if lp is None:
            lp = first.get("(" + cand)
        if lp is not None:
            scores[cand] = math.exp(lp)
    return scores or None


def complete(request: CompletionRequest, backend: Backend) -> CompletionResponse:
    """Run one completion against the given backend."""
    return backend.complete(request)


_LEADING_LETTER = re.compile(r"\(?\s*([A-Za-z])\s*[\).:]")


def _parse_leading_letter(text: str, letters: Sequence[str]) -> str | None:
    valid = {l.upper() for l in letters}
    stripped = text.strip()
    if len(stripped) == 1 and stripped.upper() in valid:
        return stripped.upper()
    m = _LEADING_LETTER.search(stripped)
    if m and m.group(1).upper() in valid:
        return m.group(1).upper()
    return None


def option_distribution(
    prompt: str,
    options: Sequence[str],
    backend: Backend,
    *,
    seed: int = 0,
    n_samples: int = 40,
    allow_sampling: bool = True,
    temperature: float = 1.0,
    top_p: float = 1.0,
    max_tokens: int = 16,
) -> dict[str, float]:
    """Probability distribution over a fixed option-letter set.

    Preferred route: ask the backend for token scores and renormalize over
    the supplied options only (ratio-preserving). Fallback when the backend
    exposes no token scores: draw n_samples completions, parse the leading
    option letter of each, and return the empirical distribution.
    """
    if len(options) < 2:
        raise ValueError("need at least 2 options")
    letters = [o.upper() for o in options]
    request = CompletionRequest(
        prompt=prompt,
        max_tokens=max_tokens,
        temperature=temperature,
        top_p=top_p,
        seed=seed,
        want_token_scores=True,
        candidate_tokens=tuple(letters),
    )
    response = backend.complete(request)
    if response.token_scores is not None:
        raw = [max(0.0, float(response.token_scores.get(l, 0.0))) for l in letters]
        total = sum(raw)
        if total <= 0:
            raise OptionScoringError("backend put no mass on any candidate option")
        return {l: v / total for l, v in zip(letters, raw)}

    if not allow_sampling:
        raise OptionScoringError(
            "backend returned no token scores and sampling fallback is disabled"
        )
    counts = {l: 0 for l in letters}
    parsed = 0
    for i in range(n_samples):
        sample_req = CompletionRequest(
            prompt=prompt,
            max_tokens=max_tokens,
            temperature=temperature,
            top_p=top_p,
            seed=derive_seed(seed, "option_sample", i),
        )
        out = backend.complete(sample_req)
        letter = _parse_leading_letter(out.text, letters)
        if letter is not None:
            counts[letter] += 1
            parsed += 1
    if parsed == 0:
        raise OptionScoringError(f"none of {n_samples} sampled completions parsed to an option")
    return {l: c / parsed for l, c in counts.items()}
