"""Feature grids: regular lattices of descriptors standing in for images.

A grid is rows x cols cells, each a dim-length descriptor, with a pixel
stride locating cell (i, j) at pixel center (stride*j + stride/2,
stride*i + stride/2).  Grids serialize to the FGRD binary format described
in read_grid/write_grid.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import Viewpoint
from .io_utils import write_bytes_atomic, write_json_atomic

FGRD_MAGIC = b"FGRD"
FGRD_VERSION = 1
# Refuse headers claiming more than this many floats (1 GiB of payload).
MAX_CELL_FLOATS = 1 << 28
# Cells with norm below this are "dead" and stay zero under normalization.
DEAD_NORM_TOL = 1e-12


class GridFormatError(ValueError):
    """Base class for FGRD parsing failures."""


class BadMagicError(GridFormatError):
    pass


class DimensionOverflowError(GridFormatError):
    pass


class TruncatedPayloadError(GridFormatError):
    pass


@dataclass
class GridMeta:
    image_id: str = ""
    width: int = 0
    height: int = 0
    viewpoint: Viewpoint | None = None

    def to_json_dict(self) -> dict:
        d = {"image_id": self.image_id, "width": self.width, "height": self.height}
        if self.viewpoint is not None:
            d["viewpoint"] = self.viewpoint.to_json_dict()
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "GridMeta":
        vp = None
        if "viewpoint" in d and d["viewpoint"] is not None:
            vp = Viewpoint.from_json_dict(
                d["viewpoint"], image_size=(d.get("width", 0) or 224, d.get("height", 0) or 224)
            )
        return cls(d.get("image_id", ""), int(d.get("width", 0)), int(d.get("height", 0)), vp)


@dataclass(eq=False)
class FeatureGrid:
    rows: int
    cols: int
    dim: int
    stride: float
    data: np.ndarray
    meta: GridMeta = field(default_factory=GridMeta)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != (self.rows, self.cols, self.dim):
            if self.data.size == self.rows * self.cols * self.dim:
                self.data = self.data.reshape(self.rows, self.cols, self.dim)
            else:
                raise ValueError(
                    f"data has {self.data.size} values, expected "
                    f"{self.rows}*{self.cols}*{self.dim}"
                )
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def cell_count(self) -> int:
        return self.rows * self.cols

    def flat(self) -> np.ndarray:
        """(rows*cols, dim) view, row-major."""
        return self.data.reshape(self.cell_count, self.dim)

    def center_of_flat(self, l: int) -> tuple[float, float]:
        return cell_center(l // self.cols, l % self.cols, self)

    def dead_cells(self) -> np.ndarray:
        """Boolean (rows, cols) mask of zero-descriptor cells."""
        return np.linalg.norm(self.data, axis=2) <= DEAD_NORM_TOL


def cell_center(i: int, j: int, grid: FeatureGrid) -> tuple[float, float]:
    """Pixel center of cell (i, j): x from the column, y from the row."""
    if not (0 <= i < grid.rows and 0 <= j < grid.cols):
        raise IndexError(f"cell ({i}, {j}) outside {grid.rows}x{grid.cols} grid")
    return (grid.stride * j + grid.stride / 2.0, grid.stride * i + grid.stride / 2.0)


def normalize(grid: FeatureGrid) -> FeatureGrid:
    """L2-normalize every cell descriptor; all-zero cells stay zero (dead)."""
    norms = np.linalg.norm(grid.data.astype(np.float64), axis=2, keepdims=True)
    safe = np.where(norms > DEAD_NORM_TOL, norms, 1.0)
    data = (grid.data / safe).astype(np.float32)
    return FeatureGrid(grid.rows, grid.cols, grid.dim, grid.stride, data, grid.meta)


def _meta_bytes(meta: GridMeta) -> bytes:
    return json.dumps(meta.to_json_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_grid(grid: FeatureGrid, path) -> None:
    """Serialize to FGRD: magic, u32 version/rows/cols/dim, f32 stride,
    u32 meta length, JSON metadata, then row-major dim-fastest f32 payload.
    All integers and floats little-endian."""
    meta = _meta_bytes(grid.meta)
    header = struct.pack(
        "<4sIIIIfI", FGRD_MAGIC, FGRD_VERSION, grid.rows, grid.cols, grid.dim,
        float(grid.stride), len(meta),
    )
    payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    write_bytes_atomic(path, header + meta + payload)


def read_grid(path) -> FeatureGrid:
    """Parse an FGRD file; raises a distinct error per corruption mode."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != FGRD_MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}")
    head_size = struct.calcsize("<4sIIIIfI")
    if len(blob) < head_size:
        raise TruncatedPayloadError(f"{path}: truncated header")
    _, version, rows, cols, dim, stride, meta_len = struct.unpack("<4sIIIIfI", blob[:head_size])
    if version != FGRD_VERSION:
        raise GridFormatError(f"{path}: unsupported version {version}")
    if rows == 0 or cols == 0 or dim == 0 or rows * cols * dim > MAX_CELL_FLOATS:
        raise DimensionOverflowError(f"{path}: bad dimensions {rows}x{cols}x{dim}")
    meta_end = head_size + meta_len
    if len(blob) < meta_end:
        raise TruncatedPayloadError(f"{path}: truncated metadata")
    try:
        meta = GridMeta.from_json_dict(json.loads(blob[head_size:meta_end].decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GridFormatError(f"{path}: bad metadata ({exc})") from exc
    need = rows * cols * dim * 4
    if len(blob) - meta_end < need:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(blob) - meta_end} bytes, expected {need}"
        )
    data = np.frombuffer(blob[meta_end:meta_end + need], dtype="<f4").reshape(rows, cols, dim)
    return FeatureGrid(rows, cols, dim, float(stride), data.copy(), meta)


def grids_equal(a: FeatureGrid, b: FeatureGrid) -> bool:
    """Bit-exact equality including metadata."""
    return (
        (a.rows, a.cols, a.dim, a.stride) == (b.rows, b.cols, b.dim, b.stride)
        and a.data.tobytes() == b.data.tobytes()
        and a.meta.to_json_dict() == b.meta.to_json_dict()
    )


@dataclass(frozen=True)
class PartAnnotation:
    """A labeled 2D part box: (x_min, y_min, x_max, y_max) in pixels."""

    part_id: int
    box: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "part_id", int(self.part_id))
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"malformed box {self.box}")
        if self.part_id < 0:
            raise ValueError("part_id must be >= 0")

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    @property
    def size(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return (x1 - x0, y1 - y0)


def write_annotations(annotations, path) -> None:
    write_json_atomic(path, [{"part_id": a.part_id, "box": list(a.box)} for a in annotations])


def read_annotations(path) -> list[PartAnnotation]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError(f"{path}: annotation file must be a JSON array")
    return [PartAnnotation(rec["part_id"], tuple(rec["box"])) for rec in raw]
