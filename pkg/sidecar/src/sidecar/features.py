"""Convolutional-network patch features exported to SPFT.

Every grid patch is resized to the classification network's input size
and pushed through an ImageNet-architecture backbone; the activations
of the penultimate fully connected layer (4096-d) become the patch's
feature row, L2-normalized. When pretrained weights cannot be fetched
(offline environments), the exporter falls back to a deterministically
seeded random initialization so the format and determinism guarantees
still hold, and warns that the features carry no ImageNet semantics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models

from .interchange import grid_origins, write_patch_features

NETWORK_INPUT = 224
FC_DIM = 4096
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_EXTRACTOR_CACHE: dict[tuple[str, int], "Fc7Extractor"] = {}


@dataclass(frozen=True)
class GridSpec:
    """Patch-grid geometry for feature export."""

    patch_size: int = 60
    stride: int = 30


@dataclass(frozen=True)
class SidecarConfig:
    """Exporter configuration: backbone, layer, proposal method, outputs."""

    model: str = "alexnet"
    layer: str = "fc7"  # penultimate fully connected activations
    proposal_method: str = "felzenszwalb-multiscale"
    spft_path: str | Path | None = None
    sppr_path: str | Path | None = None
    seed: int = 0
    batch_size: int = 32


@dataclass(frozen=True)
class FeatureExport:
    """Summary of one feature export."""

    path: Path
    patch_count: int
    feature_dim: int
    pretrained: bool


class Fc7Extractor:
    """Frozen backbone exposing penultimate fully-connected activations."""

    def __init__(self, net: models.AlexNet, pretrained: bool):
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        self.net = net
        self.pretrained = pretrained
        self.dim = net.classifier[4].out_features

    def __call__(self, batch: torch.Tensor) -> torch.Tensor:
        x = self.net.features(batch)
        x = self.net.avgpool(x)
        x = torch.flatten(x, 1)
        # classifier[:6] stops after the ReLU that follows the second
        # 4096-wide linear layer; dropout is inert in eval mode
        return self.net.classifier[:6](x)


def load_rgb(path) -> np.ndarray:
    """Decode an image file to (H, W, 3) float64 in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read image '{path}': {exc}") from exc
    return rgb


def load_feature_extractor(config: SidecarConfig) -> Fc7Extractor:
    """Load the configured backbone, pretrained when weights are reachable.

    Falls back to a seeded random initialization with a warning when the
    weight download fails; exported files stay format-valid and
    bit-deterministic, but the features are only semantically meaningful
    with real pretrained weights.
    """
    if config.model != "alexnet":
        raise ValueError(
            f"unsupported model identifier {config.model!r}; only 'alexnet' is wired up"
        )
    if config.layer != "fc7":
        raise ValueError(
            f"unsupported layer {config.layer!r}; the exporter reads the "
            "penultimate fully connected activations ('fc7')"
        )
    key = (config.model, config.seed)
    cached = _EXTRACTOR_CACHE.get(key)
    if cached is not None:
        return cached
    try:
        net = models.alexnet(weights=models.AlexNet_Weights.IMAGENET1K_V1)
        pretrained = True
    except Exception as exc:
        warnings.warn(
            f"pretrained weights unavailable ({type(exc).__name__}); falling "
            "back to seeded random initialization — exported features are "
            "format-valid and deterministic but not semantically meaningful",
            RuntimeWarning,
            stacklevel=2,
        )
        torch.manual_seed(config.seed)
        net = models.alexnet(weights=None)
        pretrained = False
    extractor = Fc7Extractor(net, pretrained)
    _EXTRACTOR_CACHE[key] = extractor
    return extractor


def extract_patch_features(
    image: np.ndarray,
    origins: np.ndarray,
    patch_size: int,
    extractor: Fc7Extractor,
    batch_size: int = 32,
) -> np.ndarray:
    """One L2-normalized activation row per patch, float64 (B, dim)."""
    patches = np.stack(
        [image[y : y + patch_size, x : x + patch_size] for y, x in origins]
    )
    batch = torch.from_numpy(patches.astype(np.float32)).permute(0, 3, 1, 2)
    batch = torch.nn.functional.interpolate(
        batch, size=(NETWORK_INPUT, NETWORK_INPUT), mode="bilinear", align_corners=False
    )
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
    batch = (batch - mean) / std
    rows = []
    with torch.no_grad():
        for start in range(0, len(batch), batch_size):
            rows.append(extractor(batch[start : start + batch_size]).numpy())
    matrix = np.concatenate(rows).astype(np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.where(norms > 0, norms, 1.0)


def export_patch_features(
    image_path,
    grid: GridSpec,
    config: SidecarConfig,
    extractor: Fc7Extractor | None = None,
) -> FeatureExport:
    """Export penultimate-FC patch activations to the configured SPFT path.

    Refuses to write anything when the configured network does not
    produce 4096-d activations.
    """
    if config.spft_path is None:
        raise ValueError("config.spft_path is not set")
    image = load_rgb(image_path)
    height, width = image.shape[:2]
    origins = grid_origins(width, height, grid.patch_size, grid.stride)
    if extractor is None:
        extractor = load_feature_extractor(config)
    matrix = extract_patch_features(
        image, origins, grid.patch_size, extractor, config.batch_size
    )
    if matrix.shape[1] != FC_DIM:
        raise ValueError(
            f"penultimate layer yields {matrix.shape[1]}-d activations, "
            f"expected {FC_DIM}; refusing to write"
        )
    write_patch_features(
        config.spft_path, matrix, width, height, grid.patch_size, grid.stride
    )
    return FeatureExport(
        path=Path(config.spft_path),
        patch_count=len(origins),
        feature_dim=matrix.shape[1],
        pretrained=extractor.pretrained,
    )
