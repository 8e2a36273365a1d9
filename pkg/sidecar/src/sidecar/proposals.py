"""Scored region proposals exported to SPPR.

A lightweight stand-in for heavyweight grouping backends: graph-based
segmentation at several scales yields candidate regions, each scored by
color homogeneity and a mid-size preference, deduplicated across
scales, and capped to the best 256. The decomposition engine treats
proposals as opaque scored masks, so any generator honoring that
contract can replace this one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage.segmentation import felzenszwalb

from .features import SidecarConfig, load_rgb
from .interchange import write_proposals

FELZENSZWALB_SCALES = (60.0, 180.0, 540.0)
PROPOSAL_CAP = 256


@dataclass(frozen=True)
class ProposalExport:
    """Summary of one proposal export."""

    path: Path
    count: int
    areas: np.ndarray  # (P,) int, pixels per mask, in file order


def generate_proposals(
    image: np.ndarray, p_max: int = PROPOSAL_CAP
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Multiscale scored region masks for one image.

    Returns (masks, scores, areas): (P, H, W) bool masks in descending
    score order, scores normalized to [0, 1], and each mask's pixel
    count as reported by the segmentation backend. Scoring favors
    color-homogeneous regions of intermediate size; identical masks
    found at different scales collapse to their best score.
    """
    height, width = image.shape[:2]
    n_pixels = height * width
    pool: dict[bytes, tuple[np.ndarray, float, int]] = {}
    for scale in FELZENSZWALB_SCALES:
        labels = felzenszwalb(
            image, scale=scale, sigma=0.8, min_size=16, channel_axis=-1
        )
        counts = np.bincount(labels.ravel())
        for label, area in enumerate(counts):
            if area == 0:
                continue
            mask = labels == label
            frac = area / n_pixels
            homogeneity = 1.0 / (1.0 + 50.0 * image[mask].var(axis=0).mean())
            size_pref = 4.0 * frac * (1.0 - frac)
            raw = homogeneity * size_pref
            key = np.packbits(mask).tobytes()
            if key not in pool or raw > pool[key][1]:
                pool[key] = (mask, raw, int(area))
    masks = np.stack([entry[0] for entry in pool.values()])
    raw_scores = np.array([entry[1] for entry in pool.values()])
    areas = np.array([entry[2] for entry in pool.values()], dtype=np.int64)
    order = np.argsort(-raw_scores, kind="stable")[:p_max]
    top = raw_scores[order]
    peak = top.max()
    scores = top / peak if peak > 0 else np.ones_like(top)
    return masks[order], scores, areas[order]


def export_proposals(image_path, config: SidecarConfig) -> ProposalExport:
    """Generate proposals for an image and write the configured SPPR path."""
    if config.sppr_path is None:
        raise ValueError("config.sppr_path is not set")
    if config.proposal_method != "felzenszwalb-multiscale":
        raise ValueError(
            f"proposal backend {config.proposal_method!r} unavailable; only "
            "'felzenszwalb-multiscale' is wired up"
        )
    image = load_rgb(image_path)
    masks, scores, areas = generate_proposals(image)
    write_proposals(config.sppr_path, masks, scores)
    return ProposalExport(path=Path(config.sppr_path), count=len(masks), areas=areas)
