"""Content hashing and JSON sidecars for files the pipeline produces."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def blob_hash(data: bytes) -> str:
    """Git-style blob hash: sha1 over 'blob <size>\\0' plus the content."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def file_blob_hash(path: str | Path) -> str:
    return blob_hash(Path(path).read_bytes())


def write_sidecar(artifact_path: str | Path, command: str, seed: int,
                  config_hash: str | None = None, extra: dict | None = None) -> Path:
    """Drop '<artifact>.json' next to the artifact with provenance fields."""
    artifact_path = Path(artifact_path)
    record = {
        "artifact": artifact_path.name,
        "blob_hash": file_blob_hash(artifact_path),
        "command": command,
        "seed": seed,
    }
    if config_hash is not None:
        record["config_hash"] = config_hash
    if extra:
        record.update(extra)
    side = artifact_path.with_name(artifact_path.name + ".json")
    side.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return side
