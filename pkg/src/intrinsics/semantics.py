"""Patch-grid features with kNN/LLE weights, and region-proposal features.

Two feature families drive the decomposition. The first is a fixed grid
of square patches, each described by a feature row; nearest neighbors in
feature space are re-expressed through locally-linear-embedding weights.
The second is a bank of scored region proposals whose score-weighted
membership indicators form a per-pixel semantic vector, optionally
reduced with PCA. Both families can be computed in-process or loaded
from interchange files (SPFT for patch features, SPPR for proposals).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from skimage.segmentation import felzenszwalb

from .imgcore import ImageBuffer, rgb_to_lab

SPFT_MAGIC = b"SPFT"
SPPR_MAGIC = b"SPPR"
FORMAT_VERSION = 1

# builtin descriptor layout: 8 orientations x 4x4 cells + 4x4x4 RGB bins
ORIENT_BINS = 8
CELL_GRID = 4
COLOR_BINS = 4
BUILTIN_FEATURE_DIM = ORIENT_BINS * CELL_GRID * CELL_GRID + COLOR_BINS**3


@dataclass(frozen=True)
class PatchGrid:
    """Sliding-window patch layout with inward-snapped boundary patches."""

    width: int
    height: int
    patch_size: int
    stride: int
    origins: np.ndarray  # (B, 2) int, (y, x) of each patch's top-left corner

    @property
    def patch_count(self) -> int:
        return len(self.origins)

    @property
    def centers(self) -> np.ndarray:
        """Flat (row-major) pixel index of each patch center."""
        half = self.patch_size // 2
        return (self.origins[:, 0] + half) * self.width + (self.origins[:, 1] + half)


@dataclass(frozen=True)
class PatchFeatureSet:
    """One L2-normalized feature row per grid patch."""

    matrix: np.ndarray  # (B, F) float64, unit rows (zero rows stay zero)
    source_tag: str  # "builtin" or "external"

    @property
    def patch_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class NeighborTable:
    """kNN indices plus LLE reconstruction weights (rows sum to 1)."""

    indices: np.ndarray  # (B, k) int
    weights: np.ndarray  # (B, k) float64


@dataclass(frozen=True)
class ProposalSet:
    """Scored binary region masks over a fixed image size."""

    width: int
    height: int
    masks: np.ndarray  # (P, H, W) bool
    scores: np.ndarray  # (P,) float64 in [0, 1]

    @property
    def count(self) -> int:
        return len(self.masks)


@dataclass(frozen=True)
class SemanticField:
    """Per-pixel proposal-membership vectors, full and PCA-reduced."""

    full: np.ndarray  # (H*W, P) float64, rows of norm 0 or 1
    reduced: np.ndarray  # (H*W, d) float64


@dataclass(frozen=True)
class RepresentativeSet:
    """Pixels closest to their proposal's mean color, one per proposal."""

    pixel_indices: np.ndarray  # (Q,) int, flat row-major
    proposal_ids: np.ndarray  # (Q,) int


def _axis_positions(dim: int, patch: int, stride: int) -> list[int]:
    positions = list(range(0, dim - patch + 1, stride))
    if positions[-1] + patch < dim:
        positions.append(dim - patch)  # snap the last patch inward
    return positions


def build_grid(width: int, height: int, patch_size: int = 60, stride: int = 30) -> PatchGrid:
    """Enumerate sliding-window patches covering every pixel."""
    if patch_size > min(width, height):
        raise ValueError(
            f"image {width}x{height} is smaller than patch size {patch_size}"
        )
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ys = _axis_positions(height, patch_size, stride)
    xs = _axis_positions(width, patch_size, stride)
    origins = np.array([(y, x) for y in ys for x in xs], dtype=np.int64)
    return PatchGrid(width, height, patch_size, stride, origins)


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.where(norms > 0, norms, 1.0)


def builtin_patch_descriptor(img: ImageBuffer, grid: PatchGrid) -> PatchFeatureSet:
    """Gradient-orientation + color histogram descriptor per patch.

    Concatenates an 8-orientation histogram over a 4x4 cell grid
    (gradient-magnitude weighted, signed orientations) with a 4x4x4
    joint RGB histogram, then L2-normalizes each row.
    """
    if img.domain != "linear":
        raise ValueError("descriptor expects a linear-domain image")
    lum = img.luminance()
    cbin = np.minimum((np.clip(img.data, 0, 1) * COLOR_BINS).astype(int), COLOR_BINS - 1)
    cidx = cbin[..., 0] * COLOR_BINS**2 + cbin[..., 1] * COLOR_BINS + cbin[..., 2]

    rows = np.zeros((grid.patch_count, BUILTIN_FEATURE_DIM))
    size = grid.patch_size
    for b, (y, x) in enumerate(grid.origins):
        # gradients from the patch alone, so identical content always
        # yields identical rows regardless of surroundings
        gy, gx = np.gradient(lum[y : y + size, x : x + size])
        mag = np.hypot(gy, gx)
        obin = np.minimum(
            (np.mod(np.arctan2(gy, gx), 2 * np.pi) / (2 * np.pi / ORIENT_BINS)).astype(int),
            ORIENT_BINS - 1,
        )
        hist = np.zeros((CELL_GRID, CELL_GRID, ORIENT_BINS))
        row_cells = np.array_split(np.arange(size), CELL_GRID)
        col_cells = np.array_split(np.arange(size), CELL_GRID)
        for ci, rsel in enumerate(row_cells):
            for cj, csel in enumerate(col_cells):
                block = np.ix_(rsel, csel)
                np.add.at(hist[ci, cj], obin[block].ravel(), mag[block].ravel())
        color = np.bincount(
            cidx[y : y + size, x : x + size].ravel(), minlength=COLOR_BINS**3
        )
        rows[b] = np.concatenate([hist.ravel(), color.astype(float)])
    return PatchFeatureSet(_normalize_rows(rows), "builtin")


def save_patch_features(path, features: PatchFeatureSet, grid: PatchGrid) -> None:
    """Write an SPFT interchange file (little-endian, f32 payload)."""
    header = struct.pack(
        "<4s7I",
        SPFT_MAGIC,
        FORMAT_VERSION,
        grid.width,
        grid.height,
        grid.patch_size,
        grid.stride,
        features.patch_count,
        features.feature_dim,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(features.matrix.astype("<f4").tobytes())


def load_patch_features(path, grid: PatchGrid) -> PatchFeatureSet:
    """Read an SPFT file and validate it against the expected grid."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head = struct.calcsize("<4s7I")
    if len(raw) < head:
        raise ValueError("SPFT file truncated")
    magic, version, width, height, psize, stride, count, dim = struct.unpack(
        "<4s7I", raw[:head]
    )
    if magic != SPFT_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected SPFT")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported SPFT version {version}")
    if (width, height, psize, stride) != (
        grid.width,
        grid.height,
        grid.patch_size,
        grid.stride,
    ):
        raise ValueError("SPFT grid geometry does not match")
    if count != grid.patch_count:
        raise ValueError(f"SPFT has {count} patches, grid has {grid.patch_count}")
    payload = np.frombuffer(raw[head:], dtype="<f4")
    if payload.size != count * dim:
        raise ValueError("SPFT payload size mismatch")
    matrix = payload.reshape(count, dim).astype(np.float64)
    return PatchFeatureSet(_normalize_rows(matrix), "external")


def knn(features: PatchFeatureSet, k: int = 10) -> np.ndarray:
    """Exact k-nearest-neighbor indices, self excluded, ties to lower index."""
    count = features.patch_count
    if count <= k:
        raise ValueError(f"need more than {k} patches, have {count}")
    m = features.matrix
    sq = np.sum(m * m, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (m @ m.T)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")  # stable => ties to lower index
    return order[:, :k]


def lle_weights(features: PatchFeatureSet, neighbors: np.ndarray) -> NeighborTable:
    """Locally-linear reconstruction weights over each patch's neighbors.

    Solves min ||f_b - sum_a w_a f_a|| with sum w_a = 1 via the local
    Gram matrix, Tikhonov-regularized so affinely dependent neighbor
    sets stay solvable.
    """
    m = features.matrix
    count, k = neighbors.shape
    weights = np.empty((count, k))
    for b in range(count):
        diff = m[b] - m[neighbors[b]]  # (k, F)
        gram = diff @ diff.T
        lam = 1e-3 * np.trace(gram) / k
        if lam <= 0:
            lam = 1e-12  # identical neighbors: fall back to uniform weights
        gram[np.diag_indices_from(gram)] += lam
        w = np.linalg.solve(gram, np.ones(k))
        weights[b] = w / w.sum()
    return NeighborTable(neighbors.copy(), weights)


def _color_histogram(idx_map: np.ndarray, labels: np.ndarray, n_labels: int) -> np.ndarray:
    """Per-label 4x4x4 color-bin counts, rows indexed by label."""
    flat = labels.ravel() * COLOR_BINS**3 + idx_map.ravel()
    counts = np.bincount(flat, minlength=n_labels * COLOR_BINS**3)
    return counts.reshape(n_labels, COLOR_BINS**3).astype(np.float64)


def _adjacent_label_pairs(labels: np.ndarray) -> set[tuple[int, int]]:
    pairs = set()
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        diff = a != b
        lo = np.minimum(a[diff], b[diff])
        hi = np.maximum(a[diff], b[diff])
        pairs.update(zip(lo.tolist(), hi.tolist()))
    return pairs


def _proposal_score(mask: np.ndarray, grad_norm: np.ndarray) -> float:
    """Area fraction damped by mean boundary-gradient strength."""
    area = mask.sum() / mask.size
    interior = mask.copy()
    interior[1:, :] &= mask[:-1, :]
    interior[:-1, :] &= mask[1:, :]
    interior[:, 1:] &= mask[:, :-1]
    interior[:, :-1] &= mask[:, 1:]
    boundary = mask & ~interior
    edge = grad_norm[boundary].mean() if boundary.any() else 0.0
    return float(np.clip(area * (1.0 - edge), 0.0, 1.0))


def builtin_proposals(img: ImageBuffer, p_max: int = 256) -> ProposalSet:
    """Multi-scale graph segmentation plus greedy color-similarity merging.

    Felzenszwalb segmentations at three smoothing scales seed the
    proposal bank; regions are then merged pairwise, most-similar first
    (histogram intersection of 4x4x4 color histograms taken on the
    unsmoothed image), and every intermediate region is emitted. Scores
    favor large regions with weak boundary gradients.
    """
    if img.domain != "linear":
        raise ValueError("proposals expect a linear-domain image")
    height, width = img.height, img.width
    cbin = np.minimum((np.clip(img.data, 0, 1) * COLOR_BINS).astype(int), COLOR_BINS - 1)
    cidx = cbin[..., 0] * COLOR_BINS**2 + cbin[..., 1] * COLOR_BINS + cbin[..., 2]
    gy, gx = np.gradient(img.luminance())
    grad = np.hypot(gy, gx)
    grad_norm = grad / grad.max() if grad.max() > 0 else grad

    masks: list[np.ndarray] = []
    scores: list[float] = []
    seen: set[bytes] = set()

    def emit(mask: np.ndarray) -> None:
        key = np.packbits(mask).tobytes()
        if key in seen:
            return
        seen.add(key)
        masks.append(mask)
        scores.append(_proposal_score(mask, grad_norm))

    for sigma in (0.5, 1.0, 2.0):
        labels = felzenszwalb(img.data, scale=100, sigma=sigma, min_size=5)
        n_labels = labels.max() + 1
        hists = _color_histogram(cidx, labels, n_labels)
        region_masks = {lab: labels == lab for lab in range(n_labels)}
        for lab in range(n_labels):
            emit(region_masks[lab])
        adjacency = _adjacent_label_pairs(labels)
        next_label = n_labels
        while adjacency:
            best, best_sim = None, -1.0
            for pair in sorted(adjacency):
                i, j = pair
                hi, hj = hists[i], hists[j]
                sim = np.minimum(hi / hi.sum(), hj / hj.sum()).sum()
                if sim > best_sim:
                    best, best_sim = pair, sim
            i, j = best
            merged = region_masks[i] | region_masks[j]
            emit(merged)
            hists = np.vstack([hists, hists[i] + hists[j]])
            region_masks[next_label] = merged
            del region_masks[i], region_masks[j]
            adjacency.discard((i, j))
            rewired = set()
            for a, b in adjacency:
                a = next_label if a in (i, j) else a
                b = next_label if b in (i, j) else b
                if a != b:
                    rewired.add((min(a, b), max(a, b)))
            adjacency = rewired
            next_label += 1

    order = np.argsort(-np.asarray(scores), kind="stable")[:p_max]
    return ProposalSet(
        width,
        height,
        np.stack([masks[i] for i in order]),
        np.asarray(scores)[order],
    )


def _encode_runs(flat_mask: np.ndarray) -> np.ndarray:
    """Row-major RLE: (start, length) pairs for each run of set pixels."""
    padded = np.concatenate([[False], flat_mask, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    return np.column_stack([starts, ends - starts]).astype(np.uint32)


def save_proposals(path, props: ProposalSet) -> None:
    """Write an SPPR interchange file (RLE masks + scores)."""
    parts = [
        struct.pack("<4s4I", SPPR_MAGIC, FORMAT_VERSION, props.width, props.height, props.count)
    ]
    for mask, score in zip(props.masks, props.scores):
        runs = _encode_runs(mask.ravel())
        parts.append(struct.pack("<fI", score, len(runs)))
        parts.append(runs.astype("<u4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_proposals(path, width: int | None = None, height: int | None = None) -> ProposalSet:
    """Read an SPPR file, validating runs and (optionally) dimensions."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head = struct.calcsize("<4s4I")
    if len(raw) < head:
        raise ValueError("SPPR file truncated")
    magic, version, file_w, file_h, count = struct.unpack("<4s4I", raw[:head])
    if magic != SPPR_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected SPPR")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported SPPR version {version}")
    if width is not None and (file_w, file_h) != (width, height):
        raise ValueError(
            f"SPPR is {file_w}x{file_h}, expected {width}x{height}"
        )
    n_pixels = file_w * file_h
    masks = np.zeros((count, n_pixels), dtype=bool)
    scores = np.empty(count)
    offset = head
    for p in range(count):
        scores[p], run_count = struct.unpack_from("<fI", raw, offset)
        offset += 8
        runs = np.frombuffer(raw, dtype="<u4", count=2 * run_count, offset=offset)
        offset += 8 * run_count
        starts, lengths = runs[0::2].astype(np.int64), runs[1::2].astype(np.int64)
        ends = starts + lengths
        if run_count and (
            np.any(lengths < 1)
            or np.any(starts[1:] < ends[:-1])
            or ends[-1] > n_pixels
        ):
            raise ValueError(f"proposal {p}: corrupt RLE runs")
        for s, e in zip(starts, ends):
            masks[p, s:e] = True
    if offset != len(raw):
        raise ValueError("SPPR trailing bytes")
    return ProposalSet(file_w, file_h, masks.reshape(count, file_h, file_w), scores)


def semantic_field(
    props: ProposalSet, width: int, height: int, d: int = 8
) -> SemanticField:
    """Score-weighted proposal-membership vectors and their PCA reduction.

    g_i holds score_c for every proposal c containing pixel i, then is
    L2-normalized (pixels in no proposal keep the zero vector). The
    reduced vector projects mean-centered g onto the top-d eigenvectors
    of the pixel-population covariance.
    """
    if props.count < 1:
        raise ValueError("need at least one proposal")
    if not 1 <= d <= props.count:
        raise ValueError(f"reduced dimension {d} must be in [1, {props.count}]")
    full = props.masks.reshape(props.count, -1).T * props.scores[None, :]
    full = _normalize_rows(full)

    mean = full.mean(axis=0)
    centered = full - mean
    cov = centered.T @ centered / len(centered)
    eigvals, eigvecs = np.linalg.eigh(cov)
    top = eigvecs[:, ::-1][:, :d]  # eigh is ascending; take the largest d
    flips = np.sign(top[np.argmax(np.abs(top), axis=0), np.arange(d)])
    top = top * np.where(flips == 0, 1.0, flips)
    return SemanticField(full, centered @ top)


def representative_pixels(
    props: ProposalSet, img: ImageBuffer, q_max: int = 500
) -> RepresentativeSet:
    """Per proposal, the pixel nearest its mask's mean CIELab color.

    Proposals are visited in descending score order; duplicate pixels
    are dropped and the total is capped at q_max.
    """
    lab = rgb_to_lab(img.data).reshape(-1, 3)
    order = np.argsort(-props.scores, kind="stable")
    pixels: list[int] = []
    owners: list[int] = []
    taken: set[int] = set()
    for p in order:
        flat = np.flatnonzero(props.masks[p].ravel())
        if len(flat) == 0:
            continue
        colors = lab[flat]
        dist = np.linalg.norm(colors - colors.mean(axis=0), axis=1)
        pick = int(flat[np.argmin(dist)])  # argmin ties to lowest pixel index
        if pick in taken:
            continue
        taken.add(pick)
        pixels.append(pick)
        owners.append(int(p))
        if len(pixels) == q_max:
            break
    return RepresentativeSet(
        np.asarray(pixels, dtype=np.int64), np.asarray(owners, dtype=np.int64)
    )
