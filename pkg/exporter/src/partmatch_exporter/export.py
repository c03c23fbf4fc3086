"""Feature-grid export: crop, rescale so the object's short axis is 224 px,
run the network, L2-normalize, and write coarse + fine FGRD files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .fgrd import write_fgrd
from .network import FeatureExtractor

STRIDES = {"coarse": 16.0, "fine": 8.0}


@dataclass
class ExportSpec:
    images: list
    out_dir: str
    weights: str
    boxes: dict = field(default_factory=dict)  # image stem -> (x0, y0, x1, y1)
    layers: tuple[str, str] = ("coarse", "fine")
    short_axis: int = 224

    def __post_init__(self):
        if self.short_axis <= 0:
            raise ValueError("short_axis must be positive")
        if len(set(self.layers)) != len(self.layers):
            raise ValueError("layers must be distinct")
        unknown = set(self.layers) - set(STRIDES)
        if unknown:
            raise ValueError(f"unknown layers {sorted(unknown)}")


def load_crop(path, box=None, short_axis: int = 224) -> np.ndarray:
    """Decode, crop (crop-then-extract), and rescale so min(w, h) == short_axis.

    Returns (H, W, 3) float32 in [0, 1].
    """
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise OSError(f"unreadable image: {path} ({exc})") from exc
    img = img.convert("RGB")
    if box is not None:
        x0, y0, x1, y1 = (int(round(v)) for v in box)
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"{path}: malformed crop box {box}")
        img = img.crop((x0, y0, x1, y1))
    scale = short_axis / min(img.size)
    new_size = (max(short_axis, int(round(img.size[0] * scale))),
                max(short_axis, int(round(img.size[1] * scale))))
    img = img.resize(new_size, Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def _normalize_cells(grid: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(grid.astype(np.float64), axis=2, keepdims=True)
    norms[norms <= 1e-12] = 1.0
    return (grid / norms).astype(np.float32)


def export_features(spec: ExportSpec) -> list[Path]:
    """Export every image to {stem}.fgrd (coarse) and {stem}.fine.fgrd.

    Grids are cell-wise L2-normalized; a 224 x 224 crop yields a
    14 x 14 x 512 coarse grid and a 28 x 28 x 256 fine grid.
    """
    extractor = FeatureExtractor(spec.weights)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for image_path in spec.images:
        stem = Path(image_path).stem
        image = load_crop(image_path, spec.boxes.get(stem), spec.short_axis)
        h, w = image.shape[:2]
        taps = extractor(image)
        for layer in spec.layers:
            grid = _normalize_cells(taps[layer])
            suffix = ".fgrd" if layer == "coarse" else ".fine.fgrd"
            path = out_dir / f"{stem}{suffix}"
            write_fgrd(path, grid, STRIDES[layer], stem, w, h)
            written.append(path)
    return written
