"""Canonical JSON encoding and hashing shared by all on-disk artifacts.

Every persisted document goes through `canonical_dumps` (sorted keys, fixed
separators, repr-exact floats) so identical inputs always produce identical
bytes; artifact and config hashes are sha256 of that encoding.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def canonical_dumps(doc) -> str:
    return json.dumps(_plain(doc), sort_keys=True, separators=(",", ":"), allow_nan=False)


def canonical_hash(doc) -> str:
    return hashlib.sha256(canonical_dumps(doc).encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
