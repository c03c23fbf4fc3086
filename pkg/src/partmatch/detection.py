"""Detect learned parts in a test image by matching a reference rendering
to the test grid and transferring the projected part centers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Mesh3D, Viewpoint, render_part_projections
from .grid import FeatureGrid
from .matching import MatchConfig, match_images
from .part_model import PartModel3D
from .transfer import DEFAULT_NEIGHBORS, NoSupportError, _nearest_support
from .viewpoint import ViewpointEnergyConfig, ViewpointPrediction, predict_viewpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    part_id: int
    box: tuple[float, float, float, float]
    score: float
    provenance: tuple[int, ...] = ()
    vertex: int = -1

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"malformed detection box {self.box}")


def _meta_diag(grid: FeatureGrid) -> float:
    w = grid.meta.width or grid.stride * grid.cols
    h = grid.meta.height or grid.stride * grid.rows
    return math.hypot(w, h)


def detect(test: FeatureGrid, model: PartModel3D, mesh: Mesh3D, reference_provider,
           vp: Viewpoint | None = None, fine_test: FeatureGrid | None = None,
           match_cfg: MatchConfig = MatchConfig(),
           k_neighbors: int = DEFAULT_NEIGHBORS,
           azimuth_source=None,
           energy_cfg: ViewpointEnergyConfig = ViewpointEnergyConfig(),
           predict_match_cfg: MatchConfig | None = None) -> list[Detection]:
    """Detect every visible model part in the test grid.

    With vp=None the viewpoint is predicted first via azimuth_source (see
    predict_viewpoint).  The reference grid rendered at the viewpoint is
    matched to the test grid; each visible part's projected center is
    transferred into the test frame, carrying the model's mean box size
    scaled by the ratio of the image diagonals.  Score is the mean matched
    similarity (1 - dist/2) of the supporting pairs.  Detections come back
    sorted by descending score.
    """
    if not model.parts:
        raise ValueError("part model is empty")
    if vp is None:
        if azimuth_source is None:
            raise ValueError("viewpoint prediction requires azimuth_source")
        # Predict on the fine grid when we have one: face-on views collapse
        # to a handful of coarse cells, too few to rank azimuths reliably.
        predict_grid = fine_test if fine_test is not None else test
        prediction: ViewpointPrediction = predict_viewpoint(
            predict_grid, azimuth_source, energy_cfg, predict_match_cfg, None)
        vp = prediction.viewpoint
    ref_coarse, ref_fine = reference_provider(vp)
    fine = fine_test if ref_fine is not None else None
    m = match_images(ref_coarse, test, ref_fine, fine, match_cfg)
    if not m.pairs:
        log.warning("image %r: empty match set, no detections", test.meta.image_id)
        return []
    scale = _meta_diag(test) / _meta_diag(ref_coarse)
    results = []
    projections = render_part_projections(model, mesh, vp)
    for inst, proj in zip(model.parts, projections):
        if not proj.visible:
            continue
        try:
            idx, weights, translations = _nearest_support(proj.center, m, k_neighbors)
        except NoSupportError:
            continue
        shift = weights @ translations
        cx, cy = proj.center[0] + shift[0], proj.center[1] + shift[1]
        w = inst.box_size[0] * scale
        h = inst.box_size[1] * scale
        if w <= 0 or h <= 0:
            continue
        sims = [max(0.0, min(1.0, 1.0 - m.pairs[i].dist / 2.0)) for i in idx]
        score = float(np.mean(sims))
        results.append(Detection(
            inst.part_id,
            (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0),
            score,
            tuple(int(i) for i in idx),
            inst.vertex,
        ))
    results.sort(key=lambda d: (-d.score, d.part_id, d.vertex, d.box))
    return results
