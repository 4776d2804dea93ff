"""JSON artifact io with canonical bytes, checksums, and atomic writes.

Mined inventories and model sidecars carry sha256 checksums of their
canonical JSON so later stages can refuse mismatched artifact combinations.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

from .errors import InputError


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def checksum(obj) -> str:
    return hashlib.sha256(canonical_json_bytes(obj)).hexdigest()


def _write_atomic_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    _write_atomic_text(path, canonical_json_bytes(obj).decode() + "\n")


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def write_jsonl(path, rows) -> None:
    text = "".join(canonical_json_bytes(row).decode() + "\n" for row in rows)
    _write_atomic_text(path, text)


def read_jsonl(path) -> list:
    out = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise InputError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    return out
