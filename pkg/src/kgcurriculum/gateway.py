"""Text-generation backends: an OpenAI-compatible HTTP chat client with
retry/backoff, and a deterministic offline mock.

The mock runs in two modes that can be combined: a scripted map keyed by the
SHA-256 of the prompt (raw-prompt keys also accepted), and a template-aware
synthesizer that recognizes each prompt template and emits a well-formed
response, so the full pipeline runs with zero network access.
"""

from __future__ import annotations

import hashlib
import os
import re
import time
from dataclasses import dataclass, field

from .errors import AuthMissing, BackendUnavailable, InvalidConfig, ResponseMalformed

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = 0.7
    max_new_tokens: int = 4096
    stop_sequences: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        if not self.prompt:
            raise InvalidConfig("prompt must be non-empty")
        if self.max_new_tokens < 1:
            raise InvalidConfig("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise InvalidConfig("temperature must be >= 0")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    prompt_tokens: int
    completion_tokens: int
    stopped_on: str  # "stop-sequence" | "length" | "end"
    retries: int = 0
    token_count_mode: str = "estimate"  # "service" | "estimate"


def whitespace_tokens(text: str) -> int:
    return len(text.split())


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _finalize(text: str, request: GenerationRequest, retries: int = 0,
              usage: tuple | None = None) -> GenerationResult:
    """Apply stop sequences and length truncation, then count tokens."""
    stopped_on = "end"
    cut = len(text)
    for stop in request.stop_sequences:
        idx = text.find(stop)
        if idx != -1 and idx < cut:
            cut = idx
            stopped_on = "stop-sequence"
    text = text[:cut]
    tokens = text.split()
    if len(tokens) > request.max_new_tokens:
        text = " ".join(tokens[: request.max_new_tokens])
        stopped_on = "length"
    if usage is not None:
        prompt_tokens, completion_tokens = usage
        mode = "service"
    else:
        prompt_tokens = whitespace_tokens(request.prompt)
        completion_tokens = whitespace_tokens(text)
        mode = "estimate"
    return GenerationResult(
        text=text,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        stopped_on=stopped_on,
        retries=retries,
        token_count_mode=mode,
    )


class HttpChatBackend:
    """JSON-over-HTTP client for the common chat-completion wire shape.

    Transient failures (HTTP 429/5xx, timeouts) are retried with exponential
    backoff up to the policy limit. The API key is read from the named
    environment variable at call time; a missing key fails before any
    network activity.
    """

    def __init__(self, endpoint: str, model_name: str, auth_env: str,
                 max_retries: int = 3, base_backoff_ms: int = 250,
                 timeout_s: float = 120.0, transport=None, sleep=time.sleep):
        if not endpoint:
            raise InvalidConfig("http-chat backend requires an endpoint")
        if not auth_env:
            raise InvalidConfig("http-chat backend requires an auth env var name")
        self.endpoint = endpoint
        self.model_name = model_name
        self.auth_env = auth_env
        self.max_retries = max_retries
        self.base_backoff_ms = base_backoff_ms
        self.timeout_s = timeout_s
        self._transport = transport or self._default_transport
        self._sleep = sleep

    def _default_transport(self, url, headers, payload):
        import requests

        resp = requests.post(url, headers=headers, json=payload,
                             timeout=self.timeout_s)
        try:
            body = resp.json()
        except ValueError:
            body = None
        return resp.status_code, body

    def complete(self, request: GenerationRequest) -> GenerationResult:
        key = os.environ.get(self.auth_env)
        if not key:
            raise AuthMissing(f"environment variable {self.auth_env} is unset")
        payload = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        if request.seed is not None:
            payload["seed"] = request.seed
        headers = {"Authorization": f"Bearer {key}"}

        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                # backoff doubles each retry, so delays are non-decreasing
                self._sleep(self.base_backoff_ms / 1000.0 * 2 ** (attempt - 1))
            try:
                status, body = self._transport(self.endpoint, headers, payload)
            except (TimeoutError, OSError) as exc:
                last_error = exc
                continue
            if status in RETRYABLE_STATUS:
                last_error = f"HTTP {status}"
                continue
            if status != 200:
                raise BackendUnavailable(f"HTTP {status} from {self.endpoint}")
            return self._parse_response(body, request, retries=attempt)
        raise BackendUnavailable(
            f"retries exhausted against {self.endpoint}: {last_error}"
        )

    @staticmethod
    def _parse_response(body, request, retries):
        try:
            text = body["choices"][0]["message"]["content"]
        except (TypeError, KeyError, IndexError):
            raise ResponseMalformed(f"unexpected response shape: {body!r}") from None
        usage = None
        if isinstance(body.get("usage"), dict):
            u = body["usage"]
            if "prompt_tokens" in u and "completion_tokens" in u:
                usage = (u["prompt_tokens"], u["completion_tokens"])
        return _finalize(text, request, retries=retries, usage=usage)


DEFAULT_DECOYS = ("Placebo tablet", "Normal saline infusion", "Watchful waiting")

_QA_PROMPT_RE = re.compile(
    r"tests the relationship between (?P<source>.+?) and (?P<target>.+?)\. "
    r"The relationship is: (?P<premises>.+?)\. The question should:",
    re.DOTALL,
)
_CLASSIFIER_LABEL_RE = re.compile(r"^- (.+)$", re.MULTILINE)
_JUDGE_RE = re.compile(
    r"Relationship: (?P<premise>.+?)\nReasoning trace: (?P<trace>.+?)\n"
    r"Is this relationship explicitly used",
    re.DOTALL,
)


class MockBackend:
    """Deterministic offline backend.

    Lookup order per call: scripted map (SHA-256 or raw prompt key), then the
    response queue, then the template-aware synthesizer. ``grader_decision``
    and ``bench_answer`` steer the synthesizer's grader and evaluation
    replies; ``bench_answer`` may be a letter or a callable(prompt) -> letter.
    """

    def __init__(self, model_name: str = "mock", script: dict | None = None,
                 queue: list | None = None, grader_decision: str = "Yes",
                 bench_answer="A", answer_letter: str = "B"):
        self.model_name = model_name
        self.script = dict(script or {})
        self.queue = list(queue or [])
        self.grader_decision = grader_decision
        self.bench_answer = bench_answer
        self.answer_letter = answer_letter
        self.calls = 0

    def complete(self, request: GenerationRequest) -> GenerationResult:
        self.calls += 1
        prompt = request.prompt
        text = self.script.get(prompt_digest(prompt))
        if text is None:
            text = self.script.get(prompt)
        if text is None and self.queue:
            text = self.queue.pop(0)
        if text is None:
            text = self._synthesize(prompt)
        return _finalize(text, request)

    # Template-aware synthesis -------------------------------------------

    def _synthesize(self, prompt: str) -> str:
        if prompt.startswith("Create a medical examination question"):
            return self._synthesize_qa(prompt)
        if prompt.startswith("Generate a detailed explanation"):
            return self._synthesize_trace(prompt)
        if prompt.startswith("You are a medical examiner"):
            return f"Correct: {self.grader_decision}"
        if prompt.startswith("You are a medical expert presented with an MCQ"):
            return self._synthesize_answer(prompt)
        if prompt.startswith("You are classifying medical concepts"):
            return self._synthesize_classification(prompt)
        if prompt.startswith("You are auditing a reasoning trace"):
            return self._synthesize_judgment(prompt)
        raise ResponseMalformed(
            f"mock has no script or template for prompt: {prompt[:80]!r}"
        )

    def _synthesize_qa(self, prompt: str) -> str:
        match = _QA_PROMPT_RE.search(prompt)
        if not match:
            raise ResponseMalformed("unrecognized QA prompt shape")
        source = match.group("source")
        target = match.group("target")
        options = {}
        decoys = iter(DEFAULT_DECOYS)
        for label in "ABCD":
            if label == self.answer_letter:
                options[label] = target
            else:
                options[label] = next(decoys)
        option_lines = "\n".join(f"{l}. {t}" for l, t in options.items())
        vignette = (
            f"A patient presents with findings related to {source}. "
            f"Which finding is most strongly linked through the chain of "
            f"associations beginning at {source}?"
        )
        return (
            "<Question>\n"
            f"{vignette}\n"
            "</Question>\n"
            "<Options>\n"
            f"{option_lines}\n"
            "</Options>\n"
            "<Answer>:\n"
            f"{self.answer_letter}\n"
            "</Answer>"
        )

    @staticmethod
    def _synthesize_trace(prompt: str) -> str:
        ctx = re.search(r"Use the following context: (.+?)\. The explanation",
                        prompt, re.DOTALL)
        premises = ctx.group(1) if ctx else "the relevant clinical associations"
        return (
            "Let's reason step by step. The key associations are: "
            f"{premises}. Following this chain leads directly to the "
            "correct option."
        )

    def _synthesize_answer(self, prompt: str) -> str:
        if callable(self.bench_answer):
            letter = self.bench_answer(prompt)
        else:
            letter = self.bench_answer
        return (
            "Working through the vignette and weighing each option "
            f"carefully. </think> Final Answer: {letter}"
        )

    @staticmethod
    def _synthesize_classification(prompt: str) -> str:
        labels = _CLASSIFIER_LABEL_RE.findall(prompt)
        concept = re.search(r"^Concept: (.+)$", prompt, re.MULTILINE)
        if not labels or not concept:
            raise ResponseMalformed("unrecognized classifier prompt shape")
        digest = hashlib.sha256(concept.group(1).encode("utf-8")).digest()
        return labels[digest[0] % len(labels)]

    @staticmethod
    def _synthesize_judgment(prompt: str) -> str:
        match = _JUDGE_RE.search(prompt)
        if not match:
            raise ResponseMalformed("unrecognized judge prompt shape")
        used = match.group("premise") in match.group("trace")
        return f"Correct: {'Yes' if used else 'No'}"


def generate(backend, request: GenerationRequest) -> GenerationResult:
    """Run one completion against any backend object."""
    return backend.complete(request)


def backend_from_config(config: dict, transport=None, sleep=time.sleep):
    """Instantiate a backend from its JSON config section."""
    kind = config.get("kind")
    if kind == "mock":
        return MockBackend(
            model_name=config.get("model_name", "mock"),
            script=config.get("script"),
            grader_decision=config.get("grader_decision", "Yes"),
            bench_answer=config.get("bench_answer", "A"),
            answer_letter=config.get("answer_letter", "B"),
        )
    if kind == "http-chat":
        retry = config.get("retry_policy", {})
        return HttpChatBackend(
            endpoint=config.get("endpoint", ""),
            model_name=config.get("model_name", ""),
            auth_env=config.get("auth", ""),
            max_retries=retry.get("max_retries", 3),
            base_backoff_ms=retry.get("base_backoff_ms", 250),
            transport=transport,
            sleep=sleep,
        )
    raise InvalidConfig(f"unknown backend kind: {kind!r}")
