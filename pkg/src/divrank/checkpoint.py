"""Versioned JSON checkpoints.

Floats are written with ``repr`` precision, so loading a checkpoint gives back
bit-identical weights.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .nn import Network, network_from_dict, network_to_dict

FORMAT = "divrank-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(model_kind: str, networks: dict[str, Network], schema_ids: dict, meta: dict | None = None) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "model_kind": model_kind,
        "schema_ids": schema_ids,
        "networks": {name: network_to_dict(net) for name, net in networks.items()},
        "meta": meta or {},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def save_checkpoint(path, model_kind, networks, schema_ids, meta=None) -> str:
    """Write a checkpoint; returns its sha256 digest."""
    text = dumps_checkpoint(model_kind, networks, schema_ids, meta)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def load_checkpoint(path, expect_kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    if expect_kind is not None and doc.get("model_kind") != expect_kind:
        raise CheckpointError(f"{path}: expected model_kind={expect_kind}, found {doc.get('model_kind')!r}")
    doc["networks"] = {name: network_from_dict(d) for name, d in doc["networks"].items()}
    return doc


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
