"""SPFT/SPPR interchange writers and the snap-inward patch grid.

The decomposition engine consumes patch features (SPFT) and region
proposals (SPPR) as little-endian binary files. This module restates
both formats on the exporter side together with the patch-grid
enumeration the SPFT header is validated against. The exporter shares
no code with the engine on purpose: any drift between the two sides
surfaces as a loader rejection instead of silently matching.

SPFT: '<4s7I' header (magic, version, width, height, patch_size,
stride, patch_count, feature_dim) followed by patch_count*feature_dim
float32 values, row-major. SPPR: '<4s4I' header (magic, version,
width, height, proposal_count), then per proposal a '<fI' pair
(score, run_count) and run_count (start, length) uint32 pairs encoding
the mask row-major; runs are sorted and non-overlapping.
"""

from __future__ import annotations

import struct

import numpy as np

SPFT_MAGIC = b"SPFT"
SPPR_MAGIC = b"SPPR"
FORMAT_VERSION = 1


def axis_positions(dim: int, patch: int, stride: int) -> list[int]:
    """Window start offsets along one axis, last window snapped inward."""
    positions = list(range(0, dim - patch + 1, stride))
    if positions[-1] + patch < dim:
        positions.append(dim - patch)
    return positions


def grid_origins(
    width: int, height: int, patch_size: int = 60, stride: int = 30
) -> np.ndarray:
    """(B, 2) array of (y, x) patch corners, y-major to match the engine."""
    if patch_size > min(width, height):
        raise ValueError(
            f"image {width}x{height} is smaller than patch size {patch_size}"
        )
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ys = axis_positions(height, patch_size, stride)
    xs = axis_positions(width, patch_size, stride)
    return np.array([(y, x) for y in ys for x in xs], dtype=np.int64)


def write_patch_features(
    path, matrix: np.ndarray, width: int, height: int, patch_size: int, stride: int
) -> None:
    """Write an SPFT file from one feature row per grid patch."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("feature matrix contains non-finite values")
    header = struct.pack(
        "<4s7I",
        SPFT_MAGIC,
        FORMAT_VERSION,
        width,
        height,
        patch_size,
        stride,
        matrix.shape[0],
        matrix.shape[1],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(matrix.astype("<f4").tobytes())


def encode_runs(flat_mask: np.ndarray) -> np.ndarray:
    """Row-major RLE over a flat boolean mask: one (start, length) per run."""
    padded = np.concatenate([[False], flat_mask.astype(bool), [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    return np.column_stack([starts, ends - starts]).astype(np.uint32)


def write_proposals(path, masks: np.ndarray, scores: np.ndarray) -> None:
    """Write an SPPR file from binary masks and their [0, 1] scores."""
    masks = np.asarray(masks)
    scores = np.asarray(scores, dtype=np.float64)
    if masks.ndim != 3 or masks.dtype != bool:
        raise ValueError("masks must be a (P, H, W) boolean array")
    if scores.shape != (len(masks),):
        raise ValueError(
            f"need one score per mask, got {scores.shape} for {len(masks)} masks"
        )
    if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
        raise ValueError("scores must lie in [0, 1]")
    count, height, width = masks.shape
    parts = [
        struct.pack("<4s4I", SPPR_MAGIC, FORMAT_VERSION, width, height, count)
    ]
    for mask, score in zip(masks, scores):
        runs = encode_runs(mask.ravel())
        parts.append(struct.pack("<fI", score, len(runs)))
        parts.append(runs.astype("<u4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
