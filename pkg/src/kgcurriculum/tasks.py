"""QA parsing and multi-stage quality filtering of generated tasks.

Raw model output is parsed against the tagged <Question>/<Options>/<Answer>
block, then screened in a fixed order: API artifacts, duplicate distractors,
distractor equal to the answer, near-duplicate distractors by token-set
Jaccard similarity. Failures are discarded, never repaired.
"""

from __future__ import annotations

import re
import string
import unicodedata
from dataclasses import dataclass, field

from .errors import FormatViolation
from .gateway import GenerationRequest, generate
from .graph import KgPath, KnowledgeGraph
from .prompts import render_qa_prompt

LABELS = ("A", "B", "C", "D")

DEFAULT_NEAR_DUPLICATE_JACCARD = 0.9


@dataclass(frozen=True)
class QaTask:
    vignette: str
    options: tuple  # ((label, text), ...) labels A-D in order
    answer: str
    path: KgPath | None = None
    source_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.vignette:
            raise ValueError("vignette must be non-empty")
        if tuple(l for l, _ in self.options) != LABELS:
            raise ValueError("options must carry labels A-D in order")
        if self.answer not in LABELS:
            raise ValueError("answer must be one of A-D")

    @property
    def answer_text(self) -> str:
        return dict(self.options)[self.answer]

    @property
    def distractors(self) -> list:
        return [(l, t) for l, t in self.options if l != self.answer]

    def to_dict(self) -> dict:
        return {
            "vignette": self.vignette,
            "options": [[l, t] for l, t in self.options],
            "answer": self.answer,
            "source_meta": dict(self.source_meta),
        }

    @classmethod
    def from_dict(cls, data: dict, path: KgPath | None = None) -> "QaTask":
        return cls(
            vignette=data["vignette"],
            options=tuple((l, t) for l, t in data["options"]),
            answer=data["answer"],
            path=path,
            source_meta=dict(data.get("source_meta", {})),
        )


@dataclass(frozen=True)
class FilterVerdict:
    passed: bool
    reason: str  # ok | api-artifact | format-violation | duplicate-distractor
    #              | distractor-matches-answer | near-duplicate-distractor

    def __post_init__(self):
        if self.passed != (self.reason == "ok"):
            raise ValueError("passed must hold exactly when reason is ok")


@dataclass(frozen=True)
class GenerationRejected:
    reason: str
    raw: str
    detail: str = ""


_QUESTION_RE = re.compile(r"<Question>(.*?)</Question>", re.DOTALL)
_OPTIONS_RE = re.compile(r"<Options>(.*?)</Options>", re.DOTALL)
_ANSWER_RE = re.compile(r"<Answer>:?(.*?)</Answer>", re.DOTALL)


def parse_qa(raw: str) -> QaTask:
    """Extract vignette, four labeled options, and the answer letter.

    Raises FormatViolation naming the first missing or malformed element.
    """
    q = _QUESTION_RE.findall(raw)
    if len(q) != 1 or not q[0].strip():
        raise FormatViolation("question block")
    opts_block = _OPTIONS_RE.findall(raw)
    if len(opts_block) != 1:
        raise FormatViolation("options block")

    options = []
    for label in LABELS:
        pattern = re.compile(
            rf"^\s*{label}\.\s*(.+?)\s*$", re.MULTILINE
        )
        found = pattern.findall(opts_block[0])
        if len(found) != 1 or not found[0].strip():
            raise FormatViolation(f"option {label}")
        options.append((label, found[0].strip()))

    ans = _ANSWER_RE.findall(raw)
    if len(ans) != 1:
        raise FormatViolation("answer block")
    letter = ans[0].strip().rstrip(".")
    if letter not in LABELS:
        raise FormatViolation("answer label")

    return QaTask(vignette=q[0].strip(), options=tuple(options), answer=letter)


def serialize_qa(task: QaTask) -> str:
    """Inverse of parse_qa on the structured fields."""
    option_lines = "\n".join(f"{l}. {t}" for l, t in task.options)
    return (
        "<Question>\n"
        f"{task.vignette}\n"
        "</Question>\n"
        "<Options>\n"
        f"{option_lines}\n"
        "</Options>\n"
        "<Answer>:\n"
        f"{task.answer}\n"
        "</Answer>"
    )


_ARTIFACT_RUN_RE = re.compile(r"[^0-9A-Za-z\s]{20,}")
_PUNCT = string.punctuation


def normalize_option(text: str) -> str:
    """NFC, lowercase, collapse whitespace, strip edge punctuation."""
    text = unicodedata.normalize("NFC", text).lower()
    text = " ".join(text.split())
    return text.strip(_PUNCT + " ")


def token_set_jaccard(a: str, b: str) -> float:
    sa = set(normalize_option(a).split())
    sb = set(normalize_option(b).split())
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def quality_filter(task: QaTask,
                   jaccard_threshold: float = DEFAULT_NEAR_DUPLICATE_JACCARD
                   ) -> FilterVerdict:
    """Screen a structurally valid task; verdict names the first failing check."""
    texts = [task.vignette] + [t for _, t in task.options]
    for text in texts:
        if "```" in text or _ARTIFACT_RUN_RE.search(text):
            return FilterVerdict(False, "api-artifact")

    # distractor pairs first; a distractor colliding with the answer is the
    # distinct reason checked next
    distractor_norms = [normalize_option(t) for _, t in task.distractors]
    if len(set(distractor_norms)) != len(distractor_norms):
        return FilterVerdict(False, "duplicate-distractor")

    answer_norm = normalize_option(task.answer_text)
    if answer_norm in distractor_norms:
        return FilterVerdict(False, "distractor-matches-answer")

    for label, text in task.distractors:
        if token_set_jaccard(text, task.answer_text) >= jaccard_threshold:
            return FilterVerdict(False, "near-duplicate-distractor")

    return FilterVerdict(True, "ok")


def generate_task(backend, path: KgPath, graph: KnowledgeGraph,
                  temperature: float = 0.7, max_new_tokens: int = 4096,
                  jaccard_threshold: float = DEFAULT_NEAR_DUPLICATE_JACCARD):
    """Render the QA prompt, call the backend, parse and quality-filter.

    Returns a QaTask with the path attached, or GenerationRejected carrying
    the verdict or parse error for pipeline accounting. Backend availability
    errors propagate.
    """
    prompt = render_qa_prompt(path, graph)
    result = generate(backend, GenerationRequest(
        prompt=prompt, temperature=temperature, max_new_tokens=max_new_tokens))
    try:
        parsed = parse_qa(result.text)
    except FormatViolation as exc:
        return GenerationRejected("format-violation", result.text, exc.element)
    verdict = quality_filter(parsed, jaccard_threshold)
    if not verdict.passed:
        return GenerationRejected(verdict.reason, result.text)
    return QaTask(
        vignette=parsed.vignette,
        options=parsed.options,
        answer=parsed.answer,
        path=path,
        source_meta={"model": backend.model_name},
    )
