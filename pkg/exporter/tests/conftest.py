import numpy as np
import pytest
from PIL import Image

from partmatch_exporter.network import make_weights


@pytest.fixture(scope="session")
def weights_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "vgg16_features.pth"
    make_weights(path, seed=0)
    return path


def synthetic_image(path, size=(224, 224), seed=1):
    rng = np.random.default_rng(seed)
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w]
    base = np.stack([
        (xx / max(w - 1, 1)) * 255,
        (yy / max(h - 1, 1)) * 255,
        ((xx + yy) / max(w + h - 2, 1)) * 255,
    ], axis=-1)
    noise = rng.uniform(0, 60, size=(h, w, 3))
    img = np.clip(base + noise, 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path)
    return path


@pytest.fixture(scope="session")
def image_224(tmp_path_factory):
    return synthetic_image(tmp_path_factory.mktemp("img") / "crop224.png", (224, 224))


@pytest.fixture(scope="session")
def image_landscape(tmp_path_factory):
    return synthetic_image(tmp_path_factory.mktemp("img") / "wide.png", (400, 300), seed=2)
