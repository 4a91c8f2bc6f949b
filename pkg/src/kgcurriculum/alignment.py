"""Hop-level recall diagnostics: does a reasoning trace explicitly use each
ground-truth hop premise?

A single LLM judge sees one hop premise and the full trace per call; its
Yes/No reply goes through the shared verdict parser and fails closed to No.
Recall is the fraction of hops judged present, so partial credit granularity
is exactly 1/hops.
"""

from __future__ import annotations

from dataclasses import dataclass

from .gateway import GenerationRequest, generate
from .graph import record_premises
from .prompts import render_hop_judge_prompt
from .traces import parse_verdict


@dataclass(frozen=True)
class HopJudgment:
    hop_index: int
    premise: str
    present: bool
    raw: str = ""


@dataclass(frozen=True)
class AlignmentRecord:
    item_id: str
    judgments: tuple
    recall: float
    answer_correct: bool
    hops: int


def judge_hops(judge, trace: str, premises, temperature: float = 0.0) -> list:
    """One judgment per hop premise; unparseable replies count as absent."""
    judgments = []
    for i, premise in enumerate(premises):
        prompt = render_hop_judge_prompt(premise, trace)
        reply = generate(judge, GenerationRequest(
            prompt=prompt, temperature=temperature, max_new_tokens=64))
        decision = parse_verdict(reply.text)
        judgments.append(HopJudgment(
            hop_index=i, premise=premise,
            present=decision == "yes", raw=reply.text))
    return judgments


def align_item(judge, bench_record: dict, trace: str,
               answer_correct: bool) -> AlignmentRecord:
    premises = record_premises(bench_record["path"])
    judgments = tuple(judge_hops(judge, trace, premises))
    present = sum(j.present for j in judgments)
    return AlignmentRecord(
        item_id=bench_record.get("item_id", ""),
        judgments=judgments,
        recall=present / len(premises),
        answer_correct=answer_correct,
        hops=len(premises),
    )


def alignment_report(records) -> list:
    """Per-hop-length rows of (hops, mean recall, accuracy, n); empty
    groups simply do not appear."""
    groups: dict = {}
    for rec in records:
        groups.setdefault(rec.hops, []).append(rec)
    rows = []
    for hops in sorted(groups):
        group = groups[hops]
        rows.append({
            "hops": hops,
            "mean_recall": sum(r.recall for r in group) / len(group),
            "accuracy": sum(r.answer_correct for r in group) / len(group),
            "n": len(group),
        })
    return rows


def alignment_csv(rows) -> str:
    lines = ["hop_length,mean_recall,accuracy,n"]
    for row in rows:
        lines.append(
            f"{row['hops']},{row['mean_recall']},{row['accuracy']},{row['n']}")
    return "\n".join(lines) + "\n"
