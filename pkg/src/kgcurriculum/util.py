"""Seed derivation, config digests, and atomic file IO."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path


def derive_seed(global_seed: int, label: str) -> int:
    """Split one global seed into independent per-module streams.

    The derivation is sha256 over "<seed>:<label>", truncated to 64 bits, so
    module-level tests and CLI runs agree on the same stream.
    """
    digest = hashlib.sha256(f"{global_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def config_digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def atomic_write_text(path, text: str) -> None:
    """Write-to-temp then rename, so failures never leave partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path, records) -> None:
    atomic_write_text(
        path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    )


def read_jsonl(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_json(path, data) -> None:
    atomic_write_text(path, json.dumps(data, sort_keys=True, indent=2) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def rng_state_to_json(state) -> list:
    """random.Random.getstate() round-trip through JSON."""
    version, internal, gauss = state
    return [version, list(internal), gauss]


def rng_state_from_json(data):
    version, internal, gauss = data
    return (version, tuple(internal), gauss)
