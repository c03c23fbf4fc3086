import numpy as np
import pytest

import partmatch as pm
from partmatch.synthetic import SceneReference, synth_feature_grid


@pytest.fixture(scope="session")
def scene():
    return pm.make_scene(seed=7)


@pytest.fixture(scope="session")
def reference(scene):
    return SceneReference(scene)


def build_split(scene, split_seed, per_bin, sigma=0.05, elevation=None, prefix="img"):
    """Deterministic list of (image_id, coarse, fine, annotations, viewpoint)."""
    out = []
    idx = 0
    for b, center in enumerate(range(0, 360, 45)):
        for t in range(per_bin):
            rng = np.random.default_rng((split_seed, b, t))
            az = (center + rng.uniform(-10, 10)) % 360
            vp = scene.viewpoint(az, elevation)
            image_id = f"{prefix}_{idx:03d}"
            seed = (split_seed, idx)
            coarse, _, annos = synth_feature_grid(scene, vp, sigma, seed, "coarse", image_id)
            fine, _, _ = synth_feature_grid(scene, vp, sigma, seed, "fine", image_id)
            out.append((image_id, coarse, fine, annos, vp))
            idx += 1
    return out


@pytest.fixture(scope="session")
def train_set(scene):
    return build_split(scene, split_seed=5, per_bin=2, prefix="train")


@pytest.fixture(scope="session")
def test_set(scene):
    return build_split(scene, split_seed=9, per_bin=4, prefix="test")


@pytest.fixture(scope="session")
def trained_model(scene, reference, train_set):
    samples = [pm.TrainingSample(coarse, annos, fine)
               for _, coarse, fine, annos, _ in train_set]
    return pm.train(samples, scene.mesh, reference)


def run_detection(scene, reference, model, images, viewpoint="given", occlude=None,
                  occlude_seed=3):
    """Detect over a list of synthetic images; returns (dets, gts) keyed by id."""
    dets_all, gts_all = {}, {}
    src = reference.azimuth_source(level="fine")
    for image_id, coarse, fine, annos, vp in images:
        if occlude and occlude != "L0":
            coarse = pm.occlude_grid(coarse, occlude, occlude_seed)
            fine = pm.occlude_grid(fine, occlude, occlude_seed)
        if viewpoint == "given":
            dets = pm.detect(coarse, model, scene.mesh, reference, vp, fine)
        else:
            dets = pm.detect(coarse, model, scene.mesh, reference, None, fine,
                             azimuth_source=src)
        dets_all[image_id] = dets
        gts_all[image_id] = annos
    return dets_all, gts_all
