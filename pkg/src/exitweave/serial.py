"""Canonical JSON envelopes with embedded float64 buffers.

Every on-disk artifact this package writes (datasets, checkpoints,
history, metrics) goes through these helpers: arrays are base64-encoded
little-endian float64 buffers, and documents are dumped with sorted
keys and a fixed layout. Rewriting the same content therefore produces
byte-identical files, which reruns rely on.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .errors import FormatError


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj, name: str) -> np.ndarray:
    try:
        buf = base64.b64decode(obj["data"])
        arr = np.frombuffer(buf, dtype="<f8").astype(np.float64)
        return arr.reshape(obj["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad encoded array {name!r}: {exc}") from exc


def dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def write_json(path, doc) -> None:
    Path(path).write_text(dump_json(doc))


def read_json(path) -> dict:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{p}: expected a JSON object at top level")
    return doc


def check_envelope(doc: dict, path, fmt: str, version: int) -> None:
    """Validate the format/version header of a loaded document."""
    if doc.get("format") != fmt:
        raise FormatError(f"{path}: not an {fmt} document (format={doc.get('format')!r})")
    if doc.get("version") != version:
        raise FormatError(
            f"{path}: unsupported {fmt} version {doc.get('version')!r}, expected {version}"
        )
