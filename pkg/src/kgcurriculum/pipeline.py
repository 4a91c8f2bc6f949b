"""End-to-end curriculum curation: sample, generate, filter, grade, store.

The loop keeps drawing (source, length, path) attempts until the dataset
holds the requested number of accepted items. Node frequencies are
incremented only for accepted items' paths, so failed attempts never bias
diversity sampling. A checkpoint (store, frequency table, rng state) is
written after every accepted item; single-worker runs with a fixed seed are
byte-reproducible and resumable.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from . import sampling
from .decontamination import (
    NgramIndex,
    item_text,
    path_contaminated,
    text_contaminated,
)
from .errors import DeadEnd, EmptyTrace, InvalidConfig, ProgressStall
from .gateway import backend_from_config
from .graph import KnowledgeGraph, path_to_record
from .sampling import FrequencyTable
from .tasks import (
    DEFAULT_NEAR_DUPLICATE_JACCARD,
    GenerationRejected,
    QaTask,
    generate_task,
)
from .traces import correctness_filter, distill_trace
from .util import (
    config_digest,
    derive_seed,
    read_json,
    read_jsonl,
    rng_state_from_json,
    rng_state_to_json,
    write_json,
    write_jsonl,
)

FUNNEL_STAGES = ("attempted", "parsed", "quality_passed", "traced", "graded",
                 "accepted")


@dataclass
class PipelineConfig:
    total_samples: int
    max_hops: int = 3
    seed: int = 0
    backends: dict = field(default_factory=dict)
    workers: int = 1
    max_attempts_per_item: int = 50
    epsilon: float = 1.0
    jaccard_threshold: float = DEFAULT_NEAR_DUPLICATE_JACCARD
    temperature: float = 0.7
    max_new_tokens: int = 4096
    output_dir: str = "out"

    def __post_init__(self):
        if self.total_samples < 1:
            raise InvalidConfig("total_samples must be >= 1")
        if self.max_hops < 1:
            raise InvalidConfig("max_hops must be >= 1")
        required = {"generator", "trace", "grader1", "grader2"}
        missing = required - set(self.backends)
        if missing:
            raise InvalidConfig(f"missing backend configs: {sorted(missing)}")
        if self.backends["grader1"] == self.backends["grader2"]:
            raise InvalidConfig("the two graders must be distinct")

    def to_dict(self) -> dict:
        return {
            "total_samples": self.total_samples,
            "max_hops": self.max_hops,
            "seed": self.seed,
            "backends": self.backends,
            "workers": self.workers,
            "max_attempts_per_item": self.max_attempts_per_item,
            "epsilon": self.epsilon,
            "jaccard_threshold": self.jaccard_threshold,
            "temperature": self.temperature,
            "max_new_tokens": self.max_new_tokens,
        }

    def digest(self) -> str:
        return config_digest(self.to_dict())


class DatasetStore:
    """JSONL-backed dataset with checkpointed frequency table and rng state.

    Accepted records are appended to the dataset file so a checkpoint after
    every item stays O(1); the small frequency/rng sidecars are rewritten
    atomically each time.
    """

    def __init__(self, output_dir):
        self.dir = Path(output_dir)
        self.dataset_path = self.dir / "dataset.jsonl"
        self.frequency_path = self.dir / "frequency.json"
        self.rng_path = self.dir / "rng_state.json"
        self.manifest_path = self.dir / "manifest.json"
        self.records: list = []
        self._flushed = 0

    def exists(self) -> bool:
        return self.dataset_path.exists()

    def reset(self) -> None:
        """Drop any on-disk state from a previous run."""
        for path in (self.dataset_path, self.frequency_path, self.rng_path,
                     self.manifest_path):
            if path.exists():
                path.unlink()
        self.records = []
        self._flushed = 0

    def load(self):
        # tolerate a partial trailing line left by an interrupted append
        records = []
        with open(self.dataset_path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        for i, line in enumerate(lines):
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    break
                raise
        self.records = records
        self._flushed = len(records)

    def checkpoint(self, freq: FrequencyTable, rng: random.Random) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.dataset_path, "a", encoding="utf-8") as fh:
            for rec in self.records[self._flushed:]:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._flushed = len(self.records)
        write_json(self.frequency_path, freq.counts)
        write_json(self.rng_path, rng_state_to_json(rng.getstate()))


def item_record(item, graph: KnowledgeGraph, item_id: str) -> dict:
    return {
        "item_id": item_id,
        "task": item.task.to_dict(),
        "path": path_to_record(item.task.path, graph),
        "hops": item.task.path.length,
        "trace": {
            "text": item.trace.text,
            "model": item.trace.model_name,
            "token_count": item.trace.token_count,
        },
        "verdicts": [
            {"grader": v.grader_name, "decision": v.decision}
            for v in item.verdicts
        ],
        "accepted": item.accepted,
    }


def build_manifest(config: PipelineConfig, records: list, tallies: dict,
                   graph: KnowledgeGraph | None = None) -> dict:
    per_hop: dict = {}
    per_category: dict = {}
    for rec in records:
        hops = str(rec["hops"])
        per_hop[hops] = per_hop.get(hops, 0) + 1
        if graph is not None:
            for hop in rec["path"]:
                for eid in (hop["head"], hop["tail"]):
                    if eid in graph:
                        for cat in graph.entity(eid).categories:
                            per_category[cat] = per_category.get(cat, 0) + 1
    return {
        "item_count": len(records),
        "per_hop_counts": per_hop,
        "per_category_entity_counts": per_category,
        "funnel": dict(tallies),
        "rejections": {k: v for k, v in tallies.items()
                       if k not in FUNNEL_STAGES},
        "seed": config.seed,
        "config_digest": config.digest(),
    }


def _attempt_stages(config, graph, generator, trace_model, graders, path):
    """Generation, trace, and grading for one sampled path.

    Returns (item_or_none, rejection_reason, funnel_increments). No shared
    pipeline state is touched, so attempts may run concurrently.
    """
    stages = []
    outcome = generate_task(
        generator, path, graph,
        temperature=config.temperature,
        max_new_tokens=config.max_new_tokens,
        jaccard_threshold=config.jaccard_threshold,
    )
    if isinstance(outcome, GenerationRejected):
        if outcome.reason != "format-violation":
            stages.append("parsed")
        return None, outcome.reason, stages
    stages += ["parsed", "quality_passed"]

    try:
        trace = distill_trace(
            trace_model, outcome, path, graph,
            temperature=config.temperature,
            max_new_tokens=config.max_new_tokens,
        )
    except EmptyTrace:
        return None, "empty-trace", stages
    stages.append("traced")

    item = correctness_filter(outcome, trace, path, graph, graders)
    stages.append("graded")
    if not item.accepted:
        return None, "correctness-rejected", stages
    return item, None, stages


def run(config: PipelineConfig, graph: KnowledgeGraph,
        protected_paths: set | None = None,
        protected_index: NgramIndex | None = None,
        resume: bool = False) -> tuple:
    """Execute the curation loop; returns (store, manifest dict).

    Single-worker runs are deterministic for a fixed seed; multi-worker runs
    interleave attempts nondeterministically but serialize acceptance, so
    counts and invariants still hold.
    """
    store = DatasetStore(config.output_dir)
    rng = random.Random(derive_seed(config.seed, "pipeline"))
    freq = FrequencyTable(epsilon=config.epsilon)
    tallies = {stage: 0 for stage in FUNNEL_STAGES}

    if resume and store.exists():
        store.load()
        freq = FrequencyTable(
            epsilon=config.epsilon, counts=read_json(store.frequency_path))
        rng.setstate(rng_state_from_json(read_json(store.rng_path)))
        if store.manifest_path.exists():
            old = read_json(store.manifest_path)
            tallies.update(old.get("funnel", {}))
            tallies.update(old.get("rejections", {}))
        else:
            # no manifest checkpoint; rebuild the monotone prefix we know
            tallies.update({stage: len(store.records)
                            for stage in FUNNEL_STAGES})
    else:
        store.reset()

    generator = backend_from_config(config.backends["generator"])
    trace_model = backend_from_config(config.backends["trace"])
    graders = [backend_from_config(config.backends["grader1"]),
               backend_from_config(config.backends["grader2"])]

    budget = config.max_attempts_per_item * config.total_samples

    def reject(reason):
        tallies[reason] = tallies.get(reason, 0) + 1

    def contamination_reason(item, path):
        if protected_paths and path_contaminated(path, protected_paths):
            return "contaminated-path"
        if protected_index is not None:
            record_preview = item_record(item, graph, "")
            if text_contaminated(item_text(record_preview), protected_index):
                return "contaminated-ngram"
        return None

    def accept(item, path):
        item_id = f"item-{len(store.records):06d}"
        store.records.append(item_record(item, graph, item_id))
        tallies["accepted"] += 1
        sampling.update_frequencies(freq, path)
        store.checkpoint(freq, rng)

    if config.workers <= 1:
        while len(store.records) < config.total_samples:
            if tallies["attempted"] >= budget:
                manifest = build_manifest(config, store.records, tallies,
                                          graph)
                write_json(store.manifest_path, manifest)
                raise ProgressStall(dict(tallies))
            tallies["attempted"] += 1

            source = sampling.sample_source(freq, graph, rng)
            length = sampling.sample_length(config.max_hops, rng)
            try:
                path = sampling.sample_path(graph, source, length, rng)
            except DeadEnd:
                reject("dead-end")
                continue

            item, reason, stages = _attempt_stages(
                config, graph, generator, trace_model, graders, path)
            for stage in stages:
                tallies[stage] += 1
            if item is None:
                reject(reason)
                continue
            blocked = contamination_reason(item, path)
            if blocked:
                reject(blocked)
                continue
            accept(item, path)
    else:
        _run_pool(config, graph, store, rng, freq, tallies, budget,
                  generator, trace_model, graders,
                  reject, contamination_reason, accept)
        if len(store.records) < config.total_samples:
            manifest = build_manifest(config, store.records, tallies, graph)
            write_json(store.manifest_path, manifest)
            raise ProgressStall(dict(tallies))

    manifest = build_manifest(config, store.records, tallies, graph)
    write_json(store.manifest_path, manifest)
    return store, manifest


def _run_pool(config, graph, store, rng, freq, tallies, budget,
              generator, trace_model, graders,
              reject, contamination_reason, accept):
    """Concurrent attempts with a serialized acceptance critical section."""
    import threading
    from concurrent.futures import ThreadPoolExecutor

    lock = threading.Lock()

    def worker(index):
        wrng = random.Random(derive_seed(config.seed,
                                         f"pipeline-worker-{index}"))
        while True:
            with lock:
                if (len(store.records) >= config.total_samples
                        or tallies["attempted"] >= budget):
                    return
                tallies["attempted"] += 1
                source = sampling.sample_source(freq, graph, wrng)
            length = sampling.sample_length(config.max_hops, wrng)
            try:
                path = sampling.sample_path(graph, source, length, wrng)
            except DeadEnd:
                with lock:
                    reject("dead-end")
                continue
            item, reason, stages = _attempt_stages(
                config, graph, generator, trace_model, graders, path)
            with lock:
                for stage in stages:
                    tallies[stage] += 1
                if item is None:
                    reject(reason)
                    continue
                blocked = contamination_reason(item, path)
                if blocked:
                    reject(blocked)
                    continue
                if len(store.records) < config.total_samples:
                    accept(item, path)

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [pool.submit(worker, i) for i in range(config.workers)]
        for future in futures:
            future.result()


THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"


def sft_record(record: dict) -> dict:
    """Map one dataset record to an SFT chat record with loss-mask hint."""
    task = record["task"]
    option_lines = "\n".join(f"{l}. {t}" for l, t in task["options"])
    user = f"{task['vignette']}\n{option_lines}"
    assistant = (
        f"{THINK_OPEN}{record['trace']['text']}{THINK_CLOSE}\n"
        f"Final Answer: {task['answer']}"
    )
    return {
        "messages": [
            {"role": "user", "content": user},
            {"role": "assistant", "content": assistant},
        ],
        "loss_mask": "assistant",
        "item_id": record["item_id"],
        "hops": record["hops"],
    }


def export_sft(records: list, out_path) -> int:
    """Write the SFT chat-record JSONL, headed by a small manifest line."""
    lines = [{"sft_manifest": {"item_count": len(records),
                               "format": "chat-think-v1"}}]
    lines.extend(sft_record(rec) for rec in records)
    write_jsonl(out_path, lines)
    return len(records)


def parse_sft_record(record: dict) -> tuple:
    """Recover (question, trace, answer) from an exported chat record."""
    user = record["messages"][0]["content"]
    assistant = record["messages"][1]["content"]
    start = assistant.index(THINK_OPEN) + len(THINK_OPEN)
    end = assistant.index(THINK_CLOSE)
    trace = assistant[start:end]
    answer = assistant.rsplit("Final Answer:", 1)[1].strip()
    return user, trace, answer


def hop_subset(records: list, hops) -> list:
    """Items whose path length is in ``hops``, original order preserved."""
    hops = set(hops)
    return [rec for rec in records if rec["hops"] in hops]
