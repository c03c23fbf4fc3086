"""VGG16 feature extraction at two pyramid levels.

The extractor taps the third and fourth max-pool outputs of a 16-layer VGG:
stride 8 with 256 channels (the fine level) and stride 16 with 512 channels
(the coarse level). Weights come from a state-dict file supplied by the
caller; this module never downloads anything.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torchvision

# Indices into vgg16().features: output of the third and fourth pool layers.
POOL3_INDEX = 16
POOL4_INDEX = 23

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class MissingWeightsError(FileNotFoundError):
    pass


def make_weights(path, seed: int = 0) -> None:
    """Write a deterministic randomly initialized VGG16 feature state dict.

    Stands in for pretrained weights in offline environments; the exporter
    contract (grid geometry, normalization, determinism) is weight-agnostic.
    """
    torch.manual_seed(seed)
    net = torchvision.models.vgg16(weights=None)
    torch.save(net.features.state_dict(), str(path))


class FeatureExtractor:
    """Loads VGG16 convolutional weights and emits pool3/pool4 grids."""

    def __init__(self, weights_path):
        if not Path(weights_path).exists():
            raise MissingWeightsError(f"missing weights: {weights_path}")
        net = torchvision.models.vgg16(weights=None)
        state = torch.load(str(weights_path), map_location="cpu", weights_only=True)
        net.features.load_state_dict(state)
        self.features = net.features.eval()
        for p in self.features.parameters():
            p.requires_grad_(False)

    def __call__(self, image: np.ndarray) -> dict[str, np.ndarray]:
        """image: (H, W, 3) float32 in [0, 1]. Returns dim-last grids keyed
        "fine" (H/8, W/8, 256) and "coarse" (H/16, W/16, 512)."""
        mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
        std = np.asarray(IMAGENET_STD, dtype=np.float32)
        x = torch.from_numpy(((image - mean) / std).transpose(2, 0, 1)[None])
        threads = torch.get_num_threads()
        torch.set_num_threads(1)  # keeps reductions orderly -> bit-stable output
        try:
            with torch.no_grad():
                taps = {}
                for idx, layer in enumerate(self.features):
                    x = layer(x)
                    if idx == POOL3_INDEX:
                        taps["fine"] = x[0].permute(1, 2, 0).numpy().copy()
                    elif idx == POOL4_INDEX:
                        taps["coarse"] = x[0].permute(1, 2, 0).numpy().copy()
                        break
        finally:
            torch.set_num_threads(threads)
        return taps
