"""Benchmark evaluation with parallel majority voting, iterative refinement,
difficulty estimation, and accuracy/token reporting.

Each item runs K independent reasoning streams. A stream generates up to the
end-of-thinking delimiter; with R > 0, the delimiter is replaced R times by a
refinement phrase so the model keeps thinking before answering. Votes exclude
abstaining streams; ties break to the lowest stream index among tied labels.
Difficulty is the pass@1 fraction over M single-stream runs, binned by
configured cutoffs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import InvalidConfig
from .gateway import GenerationRequest, generate
from .prompts import render_bench_prompt
from .tasks import LABELS, QaTask

ABSTAIN = "abstain"

DEFAULT_REFINEMENT_PHRASE = "hmm, let's double check"
DEFAULT_DELIMITER = "</think>"
# artifact defaults; bin 1 collects the easiest (highest pass@1) items
DEFAULT_BIN_CUTOFFS = (0.8, 0.6, 0.4, 0.2)


@dataclass(frozen=True)
class EvalConfig:
    streams: int = 1  # K
    refinements: int = 0  # R
    temperature: float = 0.6
    refinement_phrase: str = DEFAULT_REFINEMENT_PHRASE
    seed: int = 0
    max_new_tokens: int = 8192
    delimiter: str = DEFAULT_DELIMITER

    def __post_init__(self):
        if self.streams < 1:
            raise InvalidConfig("streams (K) must be >= 1")
        if self.refinements < 0:
            raise InvalidConfig("refinements (R) must be >= 0")


@dataclass(frozen=True)
class StreamResult:
    trace: str
    answer: str  # label or "abstain"
    thinking_tokens: int
    refinements_applied: int


@dataclass(frozen=True)
class EvalRecord:
    item_id: str
    streams: tuple
    voted_answer: str
    correct: bool
    mean_thinking_tokens: float
    category: str = ""
    hops: int = 0


@dataclass(frozen=True)
class DifficultyRecord:
    item_id: str
    pass_at_1: float
    bin_index: int  # 1 (easiest) .. len(cutoffs)+1 (hardest)
    successes: int
    samples: int


_FINAL_ANSWER_RE = re.compile(r"Final Answer:\s*\**\s*([A-D])\b", re.IGNORECASE)


def extract_answer(generation: str, labels=LABELS,
                   delimiter: str = DEFAULT_DELIMITER) -> str:
    """Last "Final Answer: <label>" wins; else the last standalone label
    token after the end-of-thinking delimiter; else abstain."""
    matches = _FINAL_ANSWER_RE.findall(generation)
    if matches:
        return matches[-1].upper()
    tail = generation.rsplit(delimiter, 1)[-1] if delimiter in generation else ""
    standalone = [tok for tok in re.findall(r"\b([A-D])\b", tail)
                  if tok in labels]
    if standalone:
        return standalone[-1]
    return ABSTAIN


def majority_vote(answers) -> str:
    """Modal label over non-abstaining streams; ties break to the lowest
    stream index among the tied labels; all-abstain abstains."""
    answers = list(answers)
    if not answers:
        raise InvalidConfig("majority_vote requires at least one answer")
    counts: dict = {}
    first_index: dict = {}
    for i, ans in enumerate(answers):
        if ans == ABSTAIN:
            continue
        counts[ans] = counts.get(ans, 0) + 1
        first_index.setdefault(ans, i)
    if not counts:
        return ABSTAIN
    best = max(counts.values())
    tied = [label for label, c in counts.items() if c == best]
    return min(tied, key=lambda label: first_index[label])


def run_stream(backend, task: QaTask, config: EvalConfig,
               stream_seed: int | None = None) -> StreamResult:
    """One reasoning stream with R refinement continuations.

    The trace accumulates every thinking segment joined by the refinement
    phrase; the delimiter only ever appears after the final segment.
    """
    prompt = render_bench_prompt(task)
    phrase = config.refinement_phrase
    segments = []
    thinking_tokens = 0
    refinements = 0
    context = prompt

    for round_idx in range(config.refinements + 1):
        last_round = round_idx == config.refinements
        stop = () if last_round else (config.delimiter,)
        result = generate(backend, GenerationRequest(
            prompt=context,
            temperature=config.temperature,
            max_new_tokens=config.max_new_tokens,
            stop_sequences=stop,
            seed=stream_seed,
        ))
        thinking_tokens += result.completion_tokens
        if last_round:
            segments.append(result.text.split(config.delimiter, 1)[0])
            answer = extract_answer(result.text, delimiter=config.delimiter)
            if result.stopped_on == "length" and answer == ABSTAIN:
                # budget exhausted before an answer: abstain, keep the trace
                pass
            trace = phrase.join(segments)
            return StreamResult(trace=trace, answer=answer,
                                thinking_tokens=thinking_tokens,
                                refinements_applied=refinements)
        segments.append(result.text)
        if result.stopped_on == "length":
            # budget gone mid-refinement: abstain with partial refinements
            return StreamResult(trace=phrase.join(segments), answer=ABSTAIN,
                                thinking_tokens=thinking_tokens,
                                refinements_applied=refinements)
        context = context + result.text + phrase
        refinements += 1

    raise AssertionError("unreachable")


def _is_correct(voted: str, task_answer: str) -> bool:
    return voted == task_answer


def evaluate_item(backend, record: dict, config: EvalConfig) -> EvalRecord:
    task = QaTask.from_dict(record["task"])
    streams = tuple(
        run_stream(backend, task, config, stream_seed=None if config.seed is None
                   else config.seed * 10_000 + k)
        for k in range(config.streams)
    )
    voted = majority_vote([s.answer for s in streams])
    mean_tokens = sum(s.thinking_tokens for s in streams) / len(streams)
    return EvalRecord(
        item_id=record.get("item_id", ""),
        streams=streams,
        voted_answer=voted,
        correct=_is_correct(voted, task.answer),
        mean_thinking_tokens=mean_tokens,
        category=record.get("category", ""),
        hops=record.get("hops", 0),
    )


def _grouped_accuracy(records, key) -> dict:
    groups: dict = {}
    for rec in records:
        groups.setdefault(key(rec), []).append(rec)
    return {
        str(k): {
            "n": len(v),
            "accuracy": sum(r.correct for r in v) / len(v),
        }
        for k, v in sorted(groups.items())
    }


def evaluate(bench_records, backend, config: EvalConfig) -> dict:
    """Per-item EvalRecords plus aggregate accuracy and token statistics."""
    records = [evaluate_item(backend, rec, config) for rec in bench_records]
    n = len(records)
    report = {
        "config": {
            "streams": config.streams,
            "refinements": config.refinements,
            "temperature": config.temperature,
            "seed": config.seed,
        },
        "n_items": n,
        "accuracy": sum(r.correct for r in records) / n if n else 0.0,
        "mean_thinking_tokens": (
            sum(r.mean_thinking_tokens for r in records) / n if n else 0.0),
        "per_category": _grouped_accuracy(
            [r for r in records if r.category], lambda r: r.category),
        "per_hop": _grouped_accuracy(
            [r for r in records if r.hops], lambda r: r.hops),
        "items": [
            {
                "item_id": r.item_id,
                "voted_answer": r.voted_answer,
                "correct": r.correct,
                "mean_thinking_tokens": r.mean_thinking_tokens,
                "answers": [s.answer for s in r.streams],
                "traces": [s.trace for s in r.streams],
                "category": r.category,
                "hops": r.hops,
            }
            for r in records
        ],
    }
    return report


def assign_bin(pass_at_1: float, cutoffs=DEFAULT_BIN_CUTOFFS) -> int:
    """Half-open intervals: bin 1 is [cutoffs[0], 1], bin i is
    [cutoffs[i-1], cutoffs[i-2]) for i in 2..len, last bin [0, cutoffs[-1])."""
    for i, cut in enumerate(cutoffs, start=1):
        if pass_at_1 >= cut:
            return i
    return len(cutoffs) + 1


def estimate_difficulty(bench_records, backend, samples: int = 16,
                        cutoffs=DEFAULT_BIN_CUTOFFS,
                        config: EvalConfig | None = None) -> list:
    """pass@1 over M independent single-stream runs per item, binned."""
    if samples < 1:
        raise InvalidConfig("samples (M) must be >= 1")
    config = config or EvalConfig()
    single = EvalConfig(
        streams=1, refinements=0, temperature=config.temperature,
        refinement_phrase=config.refinement_phrase, seed=config.seed,
        max_new_tokens=config.max_new_tokens, delimiter=config.delimiter)
    out = []
    for rec in bench_records:
        task = QaTask.from_dict(rec["task"])
        successes = 0
        for m in range(samples):
            stream = run_stream(backend, task, single,
                                stream_seed=single.seed * 10_000 + m)
            if stream.answer == task.answer:
                successes += 1
        p = successes / samples
        out.append(DifficultyRecord(
            item_id=rec.get("item_id", ""),
            pass_at_1=p,
            bin_index=assign_bin(p, cutoffs),
            successes=successes,
            samples=samples,
        ))
    return out


def report_csv(report: dict) -> str:
    """Accuracy vs mean thinking tokens summary row for plotting."""
    lines = ["streams,refinements,accuracy,mean_thinking_tokens,n_items"]
    cfg = report["config"]
    lines.append(
        f"{cfg['streams']},{cfg['refinements']},{report['accuracy']},"
        f"{report['mean_thinking_tokens']},{report['n_items']}"
    )
    return "\n".join(lines) + "\n"
