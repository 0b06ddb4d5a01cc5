"""Small shared helpers: atomic file writes and canonical JSON."""

from __future__ import annotations

import json
import os
import tempfile
from typing import Any

import numpy as np


def quantize32(a: np.ndarray) -> np.ndarray:
    """Round a float64 array to the nearest float32 value, kept as float64.

    Matrices that live in stores must survive a save/load cycle bit-exactly;
    the on-disk payload is 32-bit, so in-memory values are pinned to the
    float32 grid while all arithmetic stays in 64-bit.
    """
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


def write_bytes_atomic(path: str, payload: bytes) -> None:
    """Write payload to path via a temp file + rename in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and fixed layout so equal data gives equal bytes."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def write_json_atomic(path: str, obj: Any) -> None:
    write_text_atomic(path, canonical_json(obj))


def _plain(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays so json.dumps accepts them."""
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
