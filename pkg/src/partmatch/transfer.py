"""Carry part annotations between matched images.

Each point moves by the inverse-distance-weighted average of the relative
translations of its k nearest matched pairs, measured in the source frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import PartAnnotation
from .matching import MatchSet

# Guards the 1/d weight when a point sits exactly on a matched feature.
MIN_SUPPORT_DISTANCE = 1e-6
DEFAULT_NEIGHBORS = 3


class NoSupportError(ValueError):
    """Transfer was asked for with an empty match set."""


@dataclass(frozen=True)
class TransferredAnnotation:
    """A part box mapped into the target frame, with its supporting pairs."""

    part_id: int
    box: tuple[float, float, float, float]
    support: tuple[tuple[int, float], ...]  # (pair index, weight)
    source_image: str = ""

    def __post_init__(self):
        if not self.support:
            raise ValueError("support must be non-empty")
        weights = [w for _, w in self.support]
        if any(w <= 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("support weights must be positive and sum to 1")

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


def _nearest_support(p, m: MatchSet, k: int):
    """Indices, weights, and translations of the k source-nearest pairs."""
    if not m.pairs:
        raise NoSupportError("no support: match set is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    p = np.asarray(p, dtype=np.float64)
    src = np.array([pair.src_px for pair in m.pairs], dtype=np.float64)
    dst = np.array([pair.dst_px for pair in m.pairs], dtype=np.float64)
    d = np.linalg.norm(src - p, axis=1)
    order = sorted(range(len(m.pairs)), key=lambda i: (d[i], i))[:k]
    inv = np.array([1.0 / max(d[i], MIN_SUPPORT_DISTANCE) for i in order])
    weights = inv / inv.sum()
    translations = dst[order] - src[order]
    return order, weights, translations


def transfer_point(p, m: MatchSet, k: int = DEFAULT_NEIGHBORS) -> tuple[float, float]:
    """Map a source-frame point into the target frame."""
    _, weights, translations = _nearest_support(p, m, k)
    moved = np.asarray(p, dtype=np.float64) + weights @ translations
    return (float(moved[0]), float(moved[1]))


def transfer_box(ann: PartAnnotation, m: MatchSet, k: int = DEFAULT_NEIGHBORS) -> TransferredAnnotation:
    """Translate a part box by the transfer of its center; size and label kept."""
    cx, cy = ann.center
    idx, weights, translations = _nearest_support((cx, cy), m, k)
    shift = weights @ translations
    x0, y0, x1, y1 = ann.box
    box = (x0 + shift[0], y0 + shift[1], x1 + shift[0], y1 + shift[1])
    support = tuple((int(i), float(w)) for i, w in zip(idx, weights))
    return TransferredAnnotation(ann.part_id, box, support, m.source_id)
