"""Thinking-trace distillation and two-grader correctness filtering.

A trace is distilled from the trace model with the full path as context, then
two independent grader models each return a Yes/No verdict; the item is
accepted only when both say Yes. Unparseable grader output counts as not-yes
(fail closed). Both graders always run, so per-grader agreement statistics
stay complete even when the first grader rejects.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import EmptyTrace, InvalidConfig
from .gateway import GenerationRequest, generate
from .graph import KgPath, KnowledgeGraph
from .prompts import render_grader_prompt, render_trace_prompt
from .tasks import QaTask


@dataclass(frozen=True)
class ReasoningTrace:
    text: str
    model_name: str
    token_count: int


@dataclass(frozen=True)
class GraderVerdict:
    grader_name: str
    decision: str  # yes | no | unparseable
    raw: str = ""


@dataclass(frozen=True)
class CurriculumItem:
    task: QaTask
    trace: ReasoningTrace
    verdicts: tuple
    accepted: bool

    def __post_init__(self):
        expected = all(v.decision == "yes" for v in self.verdicts) and bool(self.verdicts)
        if self.accepted != expected:
            raise ValueError("accepted must equal (all verdicts yes)")


# the (?!/) guard keeps a literal "Correct: [Yes/No]" template echo unparseable
_VERDICT_RE = re.compile(r"correct\s*:\s*\[?\s*(yes|no)\b(?!\s*/)", re.IGNORECASE)


def parse_verdict(raw: str) -> str:
    """Total over arbitrary strings; first Correct: Yes/No match wins."""
    match = _VERDICT_RE.search(raw or "")
    if not match:
        return "unparseable"
    return match.group(1).lower()


def distill_trace(backend, task: QaTask, path: KgPath, graph: KnowledgeGraph,
                  temperature: float = 0.7,
                  max_new_tokens: int = 4096) -> ReasoningTrace:
    prompt = render_trace_prompt(task, path, graph)
    result = generate(backend, GenerationRequest(
        prompt=prompt, temperature=temperature, max_new_tokens=max_new_tokens))
    if not result.text.strip():
        raise EmptyTrace("trace model returned an empty completion")
    return ReasoningTrace(
        text=result.text,
        model_name=backend.model_name,
        token_count=result.completion_tokens,
    )


def grade(backend, task: QaTask, trace: str, path: KgPath,
          graph: KnowledgeGraph, temperature: float = 0.0,
          max_new_tokens: int = 64) -> GraderVerdict:
    prompt = render_grader_prompt(task, trace, path, graph)
    result = generate(backend, GenerationRequest(
        prompt=prompt, temperature=temperature, max_new_tokens=max_new_tokens))
    return GraderVerdict(
        grader_name=backend.model_name,
        decision=parse_verdict(result.text),
        raw=result.text,
    )


def correctness_filter(task: QaTask, trace: ReasoningTrace, path: KgPath,
                       graph: KnowledgeGraph, graders) -> CurriculumItem:
    """Collect both grader verdicts; accept iff both are yes."""
    graders = list(graders)
    if len(graders) != 2:
        raise InvalidConfig("correctness filtering requires exactly 2 graders")
    verdicts = tuple(
        grade(g, task, trace.text, path, graph) for g in graders
    )
    accepted = all(v.decision == "yes" for v in verdicts)
    return CurriculumItem(task=task, trace=trace, verdicts=verdicts,
                          accepted=accepted)
