#!/usr/bin/env python3
"""
JSON and file helpers shared by every stage.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union

PathLike = Union[str, os.PathLike]


def canonical_json(data: Any, indent: int = 2) -> str:
    """Serialize with sorted keys so identical content gives identical bytes."""
    return json.dumps(data, indent=indent, sort_keys=True, ensure_ascii=False) + "\n"


def content_hash(data: Any) -> str:
    """sha256 of the compact canonical JSON form."""
    compact = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(compact.encode("utf-8")).hexdigest()


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    """Write bytes through a temporary file in the same directory, then rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_json(path: PathLike, data: Any) -> None:
    """Write canonical JSON atomically."""
    atomic_write_bytes(path, canonical_json(data).encode("utf-8"))


def read_json(path: PathLike) -> Any:
    """Read a JSON document."""
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)
