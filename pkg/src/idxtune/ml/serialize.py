"""Versioned JSON envelopes for trained models."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

from ..errors import ModelFormatError

FORMAT = "idxtune-model"
VERSION = 1


def feature_schema_hash(names: Sequence[str]) -> str:
    return hashlib.sha256("\x1f".join(names).encode()).hexdigest()[:16]


def envelope(kind: str, feature_names: Sequence[str], payload: dict) -> dict:
    return {"format": FORMAT, "version": VERSION, "kind": kind,
            "feature_names": list(feature_names),
            "feature_schema": feature_schema_hash(feature_names), "payload": payload}


def open_envelope(doc: dict, kind: str, feature_names: Sequence[str] | None) -> dict:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFormatError("not an idxtune model document")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    if doc.get("kind") != kind:
        raise ModelFormatError(f"expected a {kind} model, found {doc.get('kind')!r}")
    if feature_schema_hash(doc.get("feature_names") or []) != doc.get("feature_schema"):
        raise ModelFormatError(f"{kind} model lists features that do not match its schema hash")
    if feature_names is not None and doc.get("feature_schema") != feature_schema_hash(feature_names):
        raise ModelFormatError(f"{kind} model was trained on a different feature schema")
    return doc["payload"]


def write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
