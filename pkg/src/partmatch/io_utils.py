"""Small file-writing helpers shared by the I/O surfaces."""

from __future__ import annotations

import json
import os
import tempfile


def write_bytes_atomic(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over the target."""
    path = str(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    """Canonical JSON: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json_atomic(path, obj) -> None:
    write_text_atomic(path, dump_json(obj))
