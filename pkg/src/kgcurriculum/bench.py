"""Category- and hop-stratified benchmark construction.

Graph nodes are aligned to a taxonomy by an LLM classifier (cached to file),
then each (category, hop-length) stratum is filled with quality- and
correctness-filtered QA items whose source node carries the category and
whose path has exactly the cell's hop count. One-hop cells are rejected at
validation time.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from pathlib import Path

from . import sampling
from .errors import DeadEnd, EmptyTrace, InvalidConfig, StrataUnfillable
from .gateway import GenerationRequest, generate
from .graph import KnowledgeGraph, path_to_record
from .prompts import render_classifier_prompt
from .tasks import GenerationRejected, generate_task
from .traces import ReasoningTrace, correctness_filter, distill_trace
from .util import config_digest, derive_seed, read_jsonl, write_jsonl

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Taxonomy:
    categories: tuple

    def __post_init__(self):
        if len(set(self.categories)) != len(self.categories):
            raise InvalidConfig("taxonomy labels must be unique")
        if not self.categories:
            raise InvalidConfig("taxonomy must be non-empty")

    def digest(self) -> str:
        return config_digest({"categories": list(self.categories)})


@dataclass(frozen=True)
class StrataSpec:
    """Per-category item counts keyed by hop length."""

    per_hop: tuple  # ((hop, count), ...)

    def __post_init__(self):
        for hop, count in self.per_hop:
            if hop < 2:
                raise InvalidConfig(
                    "one-hop strata are not allowed; hop lengths must be >= 2")
            if count < 0:
                raise InvalidConfig("strata counts must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "StrataSpec":
        return cls(tuple(sorted((int(h), int(c)) for h, c in data.items())))

    def items_per_category(self) -> int:
        return sum(count for _, count in self.per_hop)

    def total(self, taxonomy: Taxonomy) -> int:
        return self.items_per_category() * len(taxonomy.categories)


REFERENCE_STRATA = StrataSpec.from_dict({2: 100, 3: 100, 4: 30, 5: 15})


def classify_nodes(backend, graph: KnowledgeGraph, taxonomy: Taxonomy,
                   cache_path=None, temperature: float = 0.0) -> dict:
    """Map each node id to its set of category labels.

    Results are cached to a JSONL file keyed by (node id, taxonomy digest);
    a warm cache answers without any backend calls. Labels outside the
    taxonomy are dropped with a warning.
    """
    digest = taxonomy.digest()
    cache: dict = {}
    if cache_path and Path(cache_path).exists():
        for rec in read_jsonl(cache_path):
            if rec.get("taxonomy") == digest:
                cache[rec["id"]] = rec["labels"]

    valid = set(taxonomy.categories)
    result: dict = {}
    dirty = False
    for node_id in graph.node_ids():
        if node_id in cache:
            result[node_id] = set(cache[node_id])
            continue
        prompt = render_classifier_prompt(graph.name(node_id),
                                          taxonomy.categories)
        reply = generate(backend, GenerationRequest(
            prompt=prompt, temperature=temperature, max_new_tokens=128))
        labels = set()
        for part in reply.text.split(","):
            label = part.strip()
            if not label or label.lower() == "none":
                continue
            if label not in valid:
                log.warning("classifier emitted unknown label %r for node %s",
                            label, node_id)
                continue
            labels.add(label)
        result[node_id] = labels
        cache[node_id] = sorted(labels)
        dirty = True

    if cache_path and dirty:
        write_jsonl(cache_path, [
            {"id": nid, "labels": sorted(labels), "taxonomy": digest}
            for nid, labels in sorted(cache.items())
        ])
    return result


def bench_record(task, category: str, verdicts, graph: KnowledgeGraph,
                 item_id: str) -> dict:
    return {
        "item_id": item_id,
        "category": category,
        "hops": task.path.length,
        "task": task.to_dict(),
        "path": path_to_record(task.path, graph),
        "verdicts": [
            {"grader": v.grader_name, "decision": v.decision} for v in verdicts
        ],
    }


def build_bench(graph: KnowledgeGraph, taxonomy: Taxonomy, strata: StrataSpec,
                categories: dict, generator, trace_model, graders,
                seed: int = 0, max_attempts_per_item: int = 50,
                temperature: float = 0.7, max_new_tokens: int = 4096,
                with_traces: bool = False) -> list:
    """Fill every (category, hop) cell with exactly its requested count.

    Source nodes are drawn uniformly from the cell's category (no diversity
    weighting). Items pass the quality filter and two-grader correctness
    check. Raises StrataUnfillable naming the first cell that cannot be
    filled within its attempt budget.
    """
    rng = random.Random(derive_seed(seed, "bench"))
    records: list = []

    by_category = {
        cat: sorted(n for n, labels in categories.items() if cat in labels)
        for cat in taxonomy.categories
    }

    for category in taxonomy.categories:
        eligible = by_category[category]
        for hop, count in strata.per_hop:
            filled = 0
            attempts = 0
            budget = max(1, count) * max_attempts_per_item
            while filled < count:
                if not eligible or attempts >= budget:
                    raise StrataUnfillable(category, hop, len(eligible))
                attempts += 1
                source = eligible[rng.randrange(len(eligible))]
                try:
                    path = sampling.sample_path(graph, source, hop, rng)
                except DeadEnd:
                    continue
                outcome = generate_task(
                    generator, path, graph,
                    temperature=temperature, max_new_tokens=max_new_tokens)
                if isinstance(outcome, GenerationRejected):
                    continue
                task = outcome
                if with_traces:
                    try:
                        trace = distill_trace(
                            trace_model, task, path, graph,
                            temperature=temperature,
                            max_new_tokens=max_new_tokens)
                    except EmptyTrace:
                        continue
                else:
                    trace = ReasoningTrace(text="", model_name="", token_count=0)
                item = correctness_filter(task, trace, path, graph, graders)
                if not item.accepted:
                    continue
                item_id = f"bench-{len(records):06d}"
                records.append(bench_record(task, category, item.verdicts,
                                            graph, item_id))
                filled += 1
    return records
