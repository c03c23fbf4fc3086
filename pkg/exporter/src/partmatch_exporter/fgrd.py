"""Standalone FGRD writer.

Implements the toolkit's published binary layout so the exporter has no
import dependency on the main package: magic "FGRD", u32 version=1,
u32 rows/cols/dim, f32 stride, u32 metadata length, UTF-8 JSON metadata,
then rows*cols*dim little-endian f32 (row-major, dim fastest).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"FGRD"
VERSION = 1


def write_fgrd(path, data: np.ndarray, stride: float, image_id: str,
               width: int, height: int, viewpoint: dict | None = None) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError(f"expected rows x cols x dim array, got shape {data.shape}")
    rows, cols, dim = data.shape
    meta = {"image_id": image_id, "width": int(width), "height": int(height)}
    if viewpoint is not None:
        meta["viewpoint"] = viewpoint
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = struct.pack("<4sIIIIfI", MAGIC, VERSION, rows, cols, dim,
                         float(stride), len(meta_blob))
    blob = header + meta_blob + data.tobytes()
    d = os.path.dirname(str(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
