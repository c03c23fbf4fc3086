"""Viewpoint prediction by matching quality: energy over a clique matching
plus a coarse-to-fine azimuth search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Viewpoint
from .grid import FeatureGrid
from .matching import MatchConfig, MatchSet, match_images

DEFAULT_COARSE_AZIMUTHS = tuple(float(a) for a in range(0, 360, 45))


class NoViewpointError(RuntimeError):
    """Every candidate azimuth produced an empty matching."""


@dataclass(frozen=True)
class ViewpointEnergyConfig:
    lam: float = 1.0
    mu: float = 1.0
    gamma: float = 1.0
    coarse_azimuths: tuple[float, ...] = DEFAULT_COARSE_AZIMUTHS
    fine_step: float = 10.0
    fine_window: float = 90.0

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0 or self.gamma < 0:
            raise ValueError("energy weights must be >= 0")
        if not self.coarse_azimuths:
            raise ValueError("coarse_azimuths must be non-empty")
        if self.fine_step <= 0:
            raise ValueError("fine_step must be positive")
        ratio = self.fine_window / self.fine_step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("fine_step must divide fine_window")


def _diag(grid: FeatureGrid) -> float:
    w = grid.meta.width or grid.stride * grid.cols
    h = grid.meta.height or grid.stride * grid.rows
    return math.hypot(w, h)


def viewpoint_energy(m: MatchSet, a: FeatureGrid, b: FeatureGrid,
                     cfg: ViewpointEnergyConfig = ViewpointEnergyConfig()) -> float:
    """Score how viewpoint-compatible two matched grids are.

    Rewards matched-feature similarity (summed, so more matches score
    higher), penalizes absolute position disagreement (coordinates
    normalized by each image's diagonal), and rewards agreement of the
    directions between every two matched pairs.  Empty matchings score -inf.
    """
    n = len(m.pairs)
    if n == 0:
        return float("-inf")
    similarity = 0.0
    for p in m.pairs:
        va = a.data[p.src].astype(np.float64)
        vb = b.data[p.dst].astype(np.float64)
        similarity += float(va @ vb)

    diag_a, diag_b = _diag(a), _diag(b)
    distance = 0.0
    for p in m.pairs:
        pa = np.asarray(p.src_px) / diag_a
        pb = np.asarray(p.dst_px) / diag_b
        distance += float(np.linalg.norm(pa - pb))

    direction = 0.0
    pair_count = n * (n - 1) // 2
    if pair_count:
        src = np.array([p.src_px for p in m.pairs], dtype=np.float64)
        dst = np.array([p.dst_px for p in m.pairs], dtype=np.float64)
        for i in range(n):
            for j in range(i + 1, n):
                va = src[j] - src[i]
                vb = dst[j] - dst[i]
                na, nb = np.linalg.norm(va), np.linalg.norm(vb)
                if na > 1e-12 and nb > 1e-12:
                    direction += float(va @ vb) / (na * nb)

    energy = cfg.lam * similarity - (cfg.mu / n) * distance
    if pair_count:
        energy += (cfg.gamma / pair_count) * direction
    return energy


@dataclass
class ViewpointPrediction:
    viewpoint: Viewpoint
    coarse_azimuth: float
    energies: list[tuple[float, float]]  # (azimuth, energy) in evaluation order

    @property
    def azimuth(self) -> float:
        return self.viewpoint.azimuth


def predict_viewpoint(test: FeatureGrid, reference_source,
                      cfg: ViewpointEnergyConfig = ViewpointEnergyConfig(),
                      match_cfg: MatchConfig | None = None,
                      fine_test: FeatureGrid | None = None) -> ViewpointPrediction:
    """Coarse-to-fine azimuth search maximizing the viewpoint energy.

    reference_source(azimuth) must return (coarse grid, fine grid or None,
    Viewpoint) rendered at that azimuth with fixed elevation and distance.
    Ties break toward the smaller azimuth.

    When match_cfg is omitted the displacement gate is tightened to one
    grid stride: candidate azimuths differ by whole bins here, and the
    looser same-viewpoint default cannot tell a 15-degree error apart.
    """
    if match_cfg is None:
        match_cfg = MatchConfig(zeta=float(test.stride))
    cache: dict[float, tuple[float, Viewpoint]] = {}

    def energy_at(az: float) -> tuple[float, Viewpoint]:
        az = round(az % 360.0, 9)
        if az not in cache:
            ref, ref_fine, vp = reference_source(az)
            fine = fine_test if ref_fine is not None else None
            m = match_images(test, ref, fine, ref_fine, match_cfg)
            cache[az] = (viewpoint_energy(m, test, ref, cfg), vp)
        return cache[az]

    evaluated: list[tuple[float, float]] = []

    def search(azimuths) -> tuple[float, float, Viewpoint]:
        best = (float("-inf"), None, None)
        for az in azimuths:
            az = round(az % 360.0, 9)
            e, vp = energy_at(az)
            evaluated.append((az, e))
            if best[1] is None or e > best[0] or (e == best[0] and az < best[1]):
                best = (e, az, vp)
        return best

    coarse_e, coarse_az, _ = search(cfg.coarse_azimuths)
    if coarse_e == float("-inf"):
        raise NoViewpointError("no candidate azimuth produced any match")
    half = cfg.fine_window / 2.0
    steps = int(round(cfg.fine_window / cfg.fine_step))
    search(coarse_az - half + k * cfg.fine_step for k in range(steps + 1))
    # The fine lattice need not contain the coarse winner, so the final
    # argmax runs over everything evaluated so far.
    winner_az = None
    winner_e = float("-inf")
    for az in sorted(cache):
        e, _ = cache[az]
        if winner_az is None or e > winner_e:
            winner_az, winner_e = az, e
    winner_vp = cache[winner_az][1]
    final = Viewpoint(winner_az, winner_vp.elevation, winner_vp.distance,
                      winner_vp.focal, winner_vp.image_size)
    return ViewpointPrediction(final, coarse_az, evaluated)
