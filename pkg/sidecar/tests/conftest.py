"""Shared fixtures: deterministic test scenes and one-time exports."""

import numpy as np
import pytest
from PIL import Image

from sidecar import GridSpec, SidecarConfig, export_patch_features, export_proposals

SCENE_SIZE = 120


def build_scene() -> np.ndarray:
    """120x120 uint8 scene: flat color regions under a vertical light ramp."""
    rgb = np.empty((SCENE_SIZE, SCENE_SIZE, 3))
    rgb[...] = (0.2, 0.3, 0.7)
    rgb[15:70, 10:60] = (0.8, 0.3, 0.2)
    rgb[40:110, 70:115] = (0.2, 0.75, 0.35)
    rgb[80:115, 15:55] = (0.9, 0.85, 0.3)
    yy, xx = np.ogrid[:SCENE_SIZE, :SCENE_SIZE]
    disk = (yy - 30) ** 2 + (xx - 90) ** 2 <= 15**2
    rgb[disk] = (0.95, 0.55, 0.1)
    shade = 0.6 + 0.4 * np.linspace(0.0, 1.0, SCENE_SIZE)[:, None, None]
    return (np.clip(rgb * shade, 0.0, 1.0) * 255).round().astype(np.uint8)


@pytest.fixture(scope="session")
def scene_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("scene") / "scene.png"
    Image.fromarray(build_scene()).save(path)
    return path


@pytest.fixture(scope="session")
def tiled_path(tmp_path_factory):
    """Image 30-periodic along x, so stride-30 patches repeat exactly."""
    rng = np.random.default_rng(3)
    tile = (rng.uniform(0.1, 0.9, size=(SCENE_SIZE, 30, 3)) * 255).round()
    path = tmp_path_factory.mktemp("tiled") / "tiled.png"
    Image.fromarray(np.tile(tile.astype(np.uint8), (1, 4, 1))).save(path)
    return path


@pytest.fixture(scope="session")
def exported(scene_path, tmp_path_factory):
    """Both interchange files for the scene, exported once per session."""
    out = tmp_path_factory.mktemp("exports")
    config = SidecarConfig(spft_path=out / "scene.spft", sppr_path=out / "scene.sppr")
    feats = export_patch_features(scene_path, GridSpec(), config)
    props = export_proposals(scene_path, config)
    return {
        "spft": feats.path,
        "sppr": props.path,
        "features": feats,
        "proposals": props,
    }
