"""Learning part locations on the 3D model from transferred 2D annotations.

Transferred box centers are back-projected to the closest viewable mesh
vertex, clustered per part ID in 3D, filtered by support, and snapped back
to mesh vertices to form the part model.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Mesh3D, Viewpoint, project_points, visible_vertices
from .grid import FeatureGrid, PartAnnotation
from .io_utils import write_json_atomic
from .matching import MatchConfig, MatchSet, match_images, matching_loss
from .transfer import DEFAULT_NEIGHBORS, transfer_box

log = logging.getLogger(__name__)


class NoVisibleVertexError(ValueError):
    """No mesh vertex is viewable under the requested viewpoint."""


class ClusterCountError(ValueError):
    """More clusters requested than samples available for a part."""


class TrainingError(RuntimeError):
    """Every training image was skipped."""


@dataclass(frozen=True)
class ConsistencyConfig:
    lambda3: float = 1.0
    lambda4: float = 0.0
    clusters_per_part: int = 1
    min_support: int = 2

    def __post_init__(self):
        if self.lambda3 < 0 or self.lambda4 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.clusters_per_part < 1:
            raise ValueError("clusters_per_part must be >= 1")
        if self.min_support < 1:
            raise ValueError("min_support must be >= 1")


@dataclass(frozen=True)
class PartInstance:
    part_id: int
    vertex: int
    box_size: tuple[float, float]
    support: int

    def __post_init__(self):
        if self.support < 1:
            raise ValueError("support must be >= 1")


@dataclass
class PartModel3D:
    mesh_id: str
    parts: list[PartInstance] = field(default_factory=list)

    def __post_init__(self):
        keys = [(p.part_id, p.vertex) for p in self.parts]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (part_id, vertex) entry")

    def part_ids(self) -> list[int]:
        return sorted({p.part_id for p in self.parts})

    def to_json_dict(self) -> dict:
        return {
            "mesh_id": self.mesh_id,
            "parts": [
                {"part_id": p.part_id, "vertex": p.vertex,
                 "box": [p.box_size[0], p.box_size[1]], "support": p.support}
                for p in self.parts
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PartModel3D":
        parts = [
            PartInstance(int(p["part_id"]), int(p["vertex"]),
                         (float(p["box"][0]), float(p["box"][1])), int(p["support"]))
            for p in d["parts"]
        ]
        return cls(d["mesh_id"], parts)


def write_model(model: PartModel3D, path) -> None:
    write_json_atomic(path, model.to_json_dict())


def read_model(path) -> PartModel3D:
    with open(path, "r", encoding="utf-8") as fh:
        return PartModel3D.from_json_dict(json.load(fh))


def back_project(center, mesh: Mesh3D, vp: Viewpoint) -> int:
    """Index of the viewable vertex whose projection is nearest the center."""
    vis = visible_vertices(mesh, vp)
    if not vis.any():
        raise NoVisibleVertexError(f"no visible vertex at azimuth {vp.azimuth}")
    px, _ = project_points(mesh.vertices, vp)
    c = np.asarray(center, dtype=np.float64)
    d = np.linalg.norm(px - c, axis=1)
    d[~vis] = np.inf
    return int(np.argmin(d))  # argmin takes the lowest index on ties


def _kmeans(points: np.ndarray, k: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic K-means: seeded first center, then farthest-point seeding
    (ties to the lowest index), Lloyd iterations capped at 100."""
    n = len(points)
    rng = np.random.default_rng(seed)
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    min_d = np.linalg.norm(points - centers[0], axis=1)
    for c in range(1, k):
        centers[c] = points[int(np.argmax(min_d))]
        min_d = np.minimum(min_d, np.linalg.norm(points - centers[c], axis=1))
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(100):
        d = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
        new_labels = np.argmin(d, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = points[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return labels, centers


def cluster_parts(samples, mesh: Mesh3D, cfg: ConsistencyConfig, seed: int = 42) -> PartModel3D:
    """Cluster back-projected samples per part ID and snap the surviving
    cluster centers to mesh vertices.

    samples: iterable of (part_id, vertex index, (box_w, box_h)).
    Clusters with fewer than min_support members are dropped; clusters that
    snap to the same vertex merge (support summed, box sizes averaged with
    support weights).
    """
    by_part: dict[int, list[tuple[int, tuple[float, float]]]] = {}
    for part_id, vertex, box in samples:
        by_part.setdefault(int(part_id), []).append((int(vertex), (float(box[0]), float(box[1]))))
    merged: dict[tuple[int, int], list] = {}
    for part_id in sorted(by_part):
        entries = by_part[part_id]
        if cfg.clusters_per_part > len(entries):
            raise ClusterCountError(
                f"part {part_id}: {cfg.clusters_per_part} clusters requested "
                f"but only {len(entries)} samples"
            )
        pts = mesh.vertices[[v for v, _ in entries]]
        labels, _ = _kmeans(pts, cfg.clusters_per_part, (seed, part_id))
        for c in range(cfg.clusters_per_part):
            member_idx = np.nonzero(labels == c)[0]
            if len(member_idx) < cfg.min_support:
                continue
            center = pts[member_idx].mean(axis=0)
            vertex = int(np.argmin(np.linalg.norm(mesh.vertices - center, axis=1)))
            boxes = np.array([entries[i][1] for i in member_idx], dtype=np.float64)
            key = (part_id, vertex)
            slot = merged.setdefault(key, [0, np.zeros(2)])
            slot[0] += len(member_idx)
            slot[1] += boxes.sum(axis=0)
    parts = [
        PartInstance(pid, v, (total_box[0] / count, total_box[1] / count), count)
        for (pid, v), (count, total_box) in sorted(merged.items())
    ]
    return PartModel3D(mesh.mesh_id, parts)


def _image_diag(vp: Viewpoint | None, default: float = 320.0) -> float:
    if vp is None:
        return default
    w, h = vp.image_size
    return math.hypot(w, h)


def consistency_loss(transferred_per_image, viewpoints, model: PartModel3D,
                     mesh: Mesh3D, cfg: ConsistencyConfig) -> float:
    """Sum over annotations of the distance to the nearest same-ID projected
    part, weighted by lambda3, plus lambda4 times the model size.

    Annotations whose part ID has no model entry contribute the image
    diagonal as a penalty (with a warning).
    """
    total = 0.0
    for annos, vp in zip(transferred_per_image, viewpoints):
        px, depth = project_points(mesh.vertices, vp)
        penalty = _image_diag(vp)
        for ann in annos:
            c = np.asarray(ann.center, dtype=np.float64)
            candidates = [
                float(np.linalg.norm(px[p.vertex] - c))
                for p in model.parts
                if p.part_id == ann.part_id and depth[p.vertex] > 0.0
            ]
            if not candidates:
                log.warning("part %d has no projectable model entry; penalizing", ann.part_id)
                total += penalty
            else:
                total += min(candidates)
    return cfg.lambda3 * total + cfg.lambda4 * len(model.parts)


def overall_loss(match_triples, transferred_per_image, viewpoints, model: PartModel3D,
                 mesh: Mesh3D, match_cfg: MatchConfig, cons_cfg: ConsistencyConfig) -> float:
    """Matching losses summed over images plus the consistency loss.

    match_triples: iterable of (MatchSet, source grid, target grid).
    """
    total = sum(matching_loss(m, a, b, match_cfg) for m, a, b in match_triples)
    return total + consistency_loss(transferred_per_image, viewpoints, model, mesh, cons_cfg)


@dataclass
class TrainingSample:
    """One annotated training image; the grid's metadata must carry its viewpoint."""

    grid: FeatureGrid
    annotations: list[PartAnnotation]
    fine: FeatureGrid | None = None

    @property
    def viewpoint(self) -> Viewpoint:
        if self.grid.meta.viewpoint is None:
            raise ValueError(f"grid {self.grid.meta.image_id!r} has no viewpoint metadata")
        return self.grid.meta.viewpoint


def train(samples, mesh: Mesh3D, reference_provider, match_cfg: MatchConfig = MatchConfig(),
          cons_cfg: ConsistencyConfig = ConsistencyConfig(),
          k_neighbors: int = DEFAULT_NEIGHBORS, seed: int = 42) -> PartModel3D:
    """Learn the part model from annotated training images.

    For each image: render the reference grid at the image's viewpoint
    (reference_provider(vp) -> (coarse, fine or None)), match image ->
    reference, transfer every annotation, back-project its center, then
    cluster all samples.  Images with an empty match set are skipped.
    """
    collected = []
    skipped = 0
    samples = list(samples)
    for sample in samples:
        vp = sample.viewpoint
        ref_coarse, ref_fine = reference_provider(vp)
        fine = sample.fine if ref_fine is not None else None
        m = match_images(sample.grid, ref_coarse, fine, ref_fine, match_cfg)
        if not m.pairs:
            log.warning("image %r: empty match set, skipping", sample.grid.meta.image_id)
            skipped += 1
            continue
        for ann in sample.annotations:
            moved = transfer_box(ann, m, k_neighbors)
            vertex = back_project(moved.center, mesh, vp)
            collected.append((ann.part_id, vertex, ann.size))
    if not samples or skipped == len(samples):
        raise TrainingError("all training images were skipped")
    return cluster_parts(collected, mesh, cons_cfg, seed)
