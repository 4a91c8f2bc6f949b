"""Source-node, path-length, and path sampling over the knowledge graph.

Source nodes are drawn with probability inversely proportional to their
running selection frequency, p_i = w_i / Z with w_i = 1 / (f_i + eps), summed
over every node in the graph. Path lengths are uniform over {1..max_hops}.
Traversal draws each (relation, neighbor) step uniformly from the outgoing
pairs whose target has not been visited yet.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import DeadEnd, EmptyGraph, InvalidConfig
from .graph import KgPath, KnowledgeGraph, Triple


class FrequencyTable:
    """Running per-node selection counts with a stabilizing epsilon."""

    def __init__(self, epsilon: float = 1.0, counts: dict | None = None):
        if epsilon <= 0:
            raise InvalidConfig("epsilon must be positive")
        self.epsilon = epsilon
        self.counts: dict = dict(counts or {})

    def count(self, node: str) -> int:
        return self.counts.get(node, 0)

    def weight(self, node: str) -> float:
        return 1.0 / (self.count(node) + self.epsilon)

    def increment_path(self, path: KgPath) -> None:
        """Bump every node on the path by one. Counts never decrease."""
        for node in path.nodes:
            self.counts[node] = self.counts.get(node, 0) + 1

    def to_json(self) -> str:
        return json.dumps(self.counts, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, epsilon: float = 1.0) -> "FrequencyTable":
        return cls(epsilon=epsilon, counts=json.loads(text))


@dataclass(frozen=True)
class SamplerConfig:
    max_hops: int
    seed: int
    max_attempts: int = 50

    def __post_init__(self):
        if self.max_hops < 1:
            raise InvalidConfig("max_hops must be >= 1")
        if self.max_attempts < 1:
            raise InvalidConfig("max_attempts must be >= 1")


def sample_source(freq: FrequencyTable, graph: KnowledgeGraph, rng) -> str:
    """Inverse-frequency weighted draw over all graph nodes, sinks included."""
    nodes = graph.node_ids()
    if not nodes:
        raise EmptyGraph("cannot sample a source from an empty graph")
    weights = [freq.weight(n) for n in nodes]
    total = sum(weights)
    x = rng.random() * total
    acc = 0.0
    for node, w in zip(nodes, weights):
        acc += w
        if x < acc:
            return node
    return nodes[-1]  # guard against float accumulation at the boundary


def sample_length(max_hops: int, rng) -> int:
    if max_hops < 1:
        raise InvalidConfig("max_hops must be >= 1")
    return rng.randint(1, max_hops)


def sample_path(graph: KnowledgeGraph, source: str, length: int, rng) -> KgPath:
    """Uniform no-revisit walk of exactly ``length`` hops from ``source``.

    Raises DeadEnd (with the partial depth reached) when no unvisited
    neighbor exists at some step.
    """
    if length < 1:
        raise InvalidConfig("length must be >= 1")
    if source not in graph:
        raise EmptyGraph(f"source {source!r} not in graph")

    visited = {source}
    current = source
    triples = []
    for step in range(length):
        candidates = sorted(
            (rel, nxt) for rel, nxt in graph.neighbors(current) if nxt not in visited
        )
        if not candidates:
            raise DeadEnd(depth_reached=step, requested=length)
        rel, nxt = candidates[rng.randrange(len(candidates))]
        triples.append(Triple(current, rel, nxt))
        visited.add(nxt)
        current = nxt
    return KgPath(tuple(triples))


def update_frequencies(freq: FrequencyTable, path: KgPath) -> None:
    freq.increment_path(path)
