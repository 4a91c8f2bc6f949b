"""Knowledge graph loading, indexing, and path representation.

The graph is an immutable directed multigraph. Entities and labeled relation
edges are loaded from a tab-separated triple file; an adjacency index over
outgoing (relation, neighbor) pairs backs all traversal queries. Parallel
edges between the same node pair with different relations are kept as
distinct pairs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    ConflictingName,
    DanglingEntity,
    MalformedRecord,
    UnknownNode,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    categories: frozenset = frozenset()


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str


@dataclass(frozen=True)
class KgPath:
    """An ordered chain of triples with no repeated entities."""

    triples: tuple

    def __post_init__(self):
        if not self.triples:
            raise ValueError("path must contain at least one triple")
        nodes = [self.triples[0].head]
        for t in self.triples:
            if t.head != nodes[-1]:
                raise ValueError("consecutive triples must chain head to tail")
            nodes.append(t.tail)
        if len(set(nodes)) != len(nodes):
            raise ValueError("path entities must be pairwise distinct")

    @property
    def length(self) -> int:
        return len(self.triples)

    @property
    def nodes(self) -> tuple:
        return (self.triples[0].head,) + tuple(t.tail for t in self.triples)

    @property
    def source(self) -> str:
        return self.triples[0].head

    @property
    def target(self) -> str:
        return self.triples[-1].tail

    def key(self) -> str:
        """Canonical whole-sequence identity string."""
        return ";".join(f"{t.head}|{t.relation}|{t.tail}" for t in self.triples)


class KnowledgeGraph:
    """Immutable directed multigraph with an outgoing adjacency index.

    Safe for unsynchronized concurrent reads once constructed.
    """

    def __init__(self, entities: dict, triples: list):
        self._entities = dict(entities)
        self._triples = tuple(triples)
        index: dict = {eid: set() for eid in self._entities}
        for t in self._triples:
            if t.head not in self._entities or t.tail not in self._entities:
                raise DanglingEntity(f"triple references unknown entity: {t}")
            index[t.head].add((t.relation, t.tail))
        self._out_index = {eid: frozenset(pairs) for eid, pairs in index.items()}

    @property
    def entities(self) -> dict:
        return self._entities

    @property
    def triples(self) -> tuple:
        return self._triples

    @property
    def num_entities(self) -> int:
        return len(self._entities)

    @property
    def num_triples(self) -> int:
        return len(self._triples)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._entities

    def entity(self, entity_id: str) -> Entity:
        try:
            return self._entities[entity_id]
        except KeyError:
            raise UnknownNode(entity_id) from None

    def name(self, entity_id: str) -> str:
        return self.entity(entity_id).name

    def node_ids(self) -> list:
        """All entity ids, canonicalized by sorted order."""
        return sorted(self._entities)

    def neighbors(self, node: str) -> frozenset:
        """Outgoing (relation, neighbor id) pairs; empty for sink nodes."""
        try:
            return self._out_index[node]
        except KeyError:
            raise UnknownNode(node) from None

    def validate_path(self, path: KgPath) -> None:
        for t in path.triples:
            if t.head not in self._entities:
                raise DanglingEntity(t.head)
            if t.tail not in self._entities:
                raise DanglingEntity(t.tail)

    def with_categories(self, categories: dict) -> "KnowledgeGraph":
        """Return a copy whose entities carry the given category labels."""
        entities = {
            eid: Entity(e.id, e.name, frozenset(categories.get(eid, ())))
            for eid, e in self._entities.items()
        }
        return KnowledgeGraph(entities, self._triples)


def iter_triple_records(lines: Iterable[str]) -> Iterator[tuple]:
    """Yield (line_number, head_id, head_name, relation, tail_id, tail_name)
    from a TSV stream, skipping blank and #-comment lines."""
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise MalformedRecord(lineno, f"expected 5 fields, got {len(fields)}")
        if any(not f.strip() for f in fields):
            raise MalformedRecord(lineno, "empty field")
        yield (lineno, *(f.strip() for f in fields))


def load_graph(source, excluded_relations: set | frozenset = frozenset()) -> KnowledgeGraph:
    """Build a graph from a TSV triple stream or file path.

    Records whose relation is in ``excluded_relations`` are dropped. Duplicate
    triples collapse to one; self-loop records are dropped with a warning. A
    single id carrying two different names rejects the whole load.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return load_graph(fh, excluded_relations)

    entities: dict = {}
    names: dict = {}
    triples: dict = {}
    excluded = set(excluded_relations)

    def register(lineno, eid, name):
        seen = names.get(eid)
        if seen is not None and seen != name:
            raise ConflictingName(
                f"line {lineno}: id {eid!r} has conflicting names "
                f"{seen!r} and {name!r}"
            )
        names[eid] = name
        entities[eid] = Entity(eid, name)

    for lineno, hid, hname, rel, tid, tname in iter_triple_records(source):
        if rel in excluded:
            continue
        if hid == tid:
            log.warning("line %d: dropping self-loop triple on %s", lineno, hid)
            continue
        register(lineno, hid, hname)
        register(lineno, tid, tname)
        triples.setdefault((hid, rel, tid), Triple(hid, rel, tid))

    ordered = [triples[k] for k in sorted(triples)]
    return KnowledgeGraph(entities, ordered)


def load_categories(path) -> dict:
    """Read the optional JSON file mapping entity id -> list of labels."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {eid: frozenset(labels) for eid, labels in raw.items()}


def verbalize_path(path: KgPath, graph: KnowledgeGraph) -> list:
    """Render one hop-level premise string per triple of the path."""
    graph.validate_path(path)
    return [
        f"{graph.name(t.head)} --{t.relation}--> {graph.name(t.tail)}"
        for t in path.triples
    ]


def path_to_record(path: KgPath, graph: KnowledgeGraph) -> list:
    """Self-contained serialization of a path (ids and names) for JSONL."""
    return [
        {
            "head": t.head,
            "head_name": graph.name(t.head),
            "relation": t.relation,
            "tail": t.tail,
            "tail_name": graph.name(t.tail),
        }
        for t in path.triples
    ]


def path_from_record(record: list) -> KgPath:
    return KgPath(tuple(Triple(h["head"], h["relation"], h["tail"]) for h in record))


def record_premises(record: list) -> list:
    """Hop premises straight from a serialized path, no graph needed."""
    return [
        f"{h['head_name']} --{h['relation']}--> {h['tail_name']}" for h in record
    ]


def graph_stats(graph: KnowledgeGraph, rng=None, shortest_path_pairs: int = 0) -> dict:
    """Summary statistics: node/edge counts, degree histogram, and an
    optional sampled shortest-path histogram over random node pairs."""
    degrees = [len(graph.neighbors(n)) for n in graph.node_ids()]
    hist: dict = {}
    for d in degrees:
        hist[d] = hist.get(d, 0) + 1
    stats = {
        "nodes": graph.num_entities,
        "edges": graph.num_triples,
        "out_degree_histogram": {str(k): v for k, v in sorted(hist.items())},
        "max_out_degree": max(degrees, default=0),
    }
    if shortest_path_pairs and rng is not None and graph.num_entities >= 2:
        stats["shortest_path_histogram"] = _sampled_shortest_paths(
            graph, rng, shortest_path_pairs
        )
    return stats


def _sampled_shortest_paths(graph: KnowledgeGraph, rng, pairs: int) -> dict:
    from collections import deque

    ids = graph.node_ids()
    hist: dict = {"unreachable": 0}
    for _ in range(pairs):
        src = rng.choice(ids)
        dst = rng.choice(ids)
        if src == dst:
            hist["0"] = hist.get("0", 0) + 1
            continue
        seen = {src}
        queue = deque([(src, 0)])
        found = None
        while queue:
            node, depth = queue.popleft()
            for _, nxt in graph.neighbors(node):
                if nxt == dst:
                    found = depth + 1
                    queue.clear()
                    break
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append((nxt, depth + 1))
        if found is None:
            hist["unreachable"] += 1
        else:
            hist[str(found)] = hist.get(str(found), 0) + 1
    return hist
