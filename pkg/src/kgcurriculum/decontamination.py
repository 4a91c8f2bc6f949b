"""Two-fold decontamination against a protected benchmark.

An item is removed when its KG path exactly matches a protected path
(whole-sequence identity; partial overlaps are allowed to survive) or when
its question+options text shares any window of n consecutive tokens
(default 18) with a protected question. Grams are stored as 128-bit hashes
of the token windows to bound memory.
"""

from __future__ import annotations

import hashlib
import string
import unicodedata
from dataclasses import dataclass

from .graph import KgPath

DEFAULT_NGRAM = 18

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})

TOKENIZER_SPEC = "nfc-lower-punct2space-whitespace"


def tokenize(text: str) -> list:
    """NFC, lowercase, punctuation to spaces, split on whitespace."""
    text = unicodedata.normalize("NFC", text).lower()
    return text.translate(_PUNCT_TABLE).split()


def path_key(path: KgPath) -> str:
    return path.key()


def _gram_hash(tokens) -> bytes:
    joined = "\x1f".join(tokens).encode("utf-8")
    return hashlib.blake2b(joined, digest_size=16).digest()


class NgramIndex:
    """Hashed n-gram windows from the protected corpus."""

    def __init__(self, n: int = DEFAULT_NGRAM):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.grams: set = set()
        self.tokenizer_spec = TOKENIZER_SPEC

    def add_text(self, text: str) -> None:
        tokens = tokenize(text)
        for i in range(len(tokens) - self.n + 1):
            self.grams.add(_gram_hash(tokens[i : i + self.n]))

    @classmethod
    def build(cls, texts, n: int = DEFAULT_NGRAM) -> "NgramIndex":
        index = cls(n)
        for text in texts:
            index.add_text(text)
        return index


def path_contaminated(candidate: KgPath, protected: set) -> bool:
    """Whole-sequence identity only; prefixes of protected paths pass."""
    return candidate.key() in protected


def text_contaminated(candidate_text: str, index: NgramIndex) -> bool:
    tokens = tokenize(candidate_text)
    for i in range(len(tokens) - index.n + 1):
        if _gram_hash(tokens[i : i + index.n]) in index.grams:
            return True
    return False


def item_text(record: dict) -> str:
    """Overlap text for a dataset record: vignette plus option texts."""
    task = record["task"]
    parts = [task["vignette"]] + [text for _, text in task["options"]]
    return " ".join(parts)


def bench_text(record: dict) -> str:
    task = record.get("task", record)
    parts = [task["vignette"]] + [text for _, text in task["options"]]
    return " ".join(parts)


@dataclass(frozen=True)
class Removal:
    item_id: str
    reason: str  # path | ngram | both


def decontaminate(items, protected_paths: set, index: NgramIndex,
                  get_path=None, get_text=None, get_id=None):
    """Split items into (retained, removals) against the protected sets.

    ``items`` is any sequence; the accessors default to dataset-record
    dictionaries as written by the pipeline store.
    """
    from .graph import path_from_record

    get_path = get_path or (lambda rec: path_from_record(rec["path"]))
    get_text = get_text or item_text
    get_id = get_id or (lambda rec: rec.get("item_id", ""))

    retained = []
    removals = []
    for item in items:
        by_path = path_contaminated(get_path(item), protected_paths)
        by_text = text_contaminated(get_text(item), index)
        if by_path and by_text:
            removals.append((item, Removal(get_id(item), "both")))
        elif by_path:
            removals.append((item, Removal(get_id(item), "path")))
        elif by_text:
            removals.append((item, Removal(get_id(item), "ngram")))
        else:
            retained.append(item)
    return retained, removals


def protected_sets_from_bench(bench_records, n: int = DEFAULT_NGRAM):
    """Build (path-key set, n-gram index) from benchmark JSONL records."""
    from .graph import path_from_record

    paths = set()
    index = NgramIndex(n)
    for rec in bench_records:
        if rec.get("path"):
            paths.add(path_from_record(rec["path"]).key())
        index.add_text(bench_text(rec))
    return paths, index
