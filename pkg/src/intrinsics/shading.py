"""Smooth-shading stage: quadratic energy over per-pixel log-shading.

The energy couples four ingredients — locally-linear patch consistency
at grid centers, structure-aware propagation through a matting
Laplacian, semantic-similarity smoothing, and a chromaticity-gated
retinex term tying shading differences to log-luminance differences —
plus a tiny gauge anchor that pins the otherwise free global scale.
Everything reduces to one sparse SPD system solved by preconditioned
conjugate gradients; log-reflectance is whatever is left over.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .imgcore import ChromaticityField, ImageBuffer
from .params import IterationParams
from .semantics import NeighborTable, PatchGrid, SemanticField
from .solvers import conjugate_gradient

# unordered 8-neighborhood pairs: each offset enumerates every pair once
NEIGHBOR_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))

DEFAULT_GAUGE_WEIGHT = 1e-6


@dataclass(frozen=True)
class PixelPairs:
    """Flat pixel-index pairs with one weight per pair."""

    i: np.ndarray
    j: np.ndarray
    w: np.ndarray


@dataclass(frozen=True)
class ShadingSystem:
    """Normal equations sigma' M sigma - 2 rhs' sigma + constant.

    The rank-one gauge block is kept out of the sparse matrix and
    applied analytically inside `apply`, so M stays O(pairs) in memory.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    gauge_weight: float
    gauge_total: float  # anchored value of sum(sigma)
    constant: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = self.matrix @ x
        if self.gauge_weight > 0:
            out = out + self.gauge_weight * x.sum()
        return out

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal() + self.gauge_weight

    def energy(self, sigma: np.ndarray) -> float:
        """Full energy value, constants included (non-negative)."""
        return float(sigma @ self.apply(sigma) - 2.0 * (self.rhs @ sigma) + self.constant)

    def dump_matrix(self, path) -> None:
        """Debug dump of the sparse part in Matrix-Market text form."""
        from scipy.io import mmwrite

        mmwrite(str(path), self.matrix)


@dataclass(frozen=True)
class StageOneResult:
    """Log shading plus the log reflectance that exactly complements it."""

    log_shading: np.ndarray  # (H, W)
    log_reflectance: np.ndarray  # (H, W, 3), logI - log_shading
    iterations: int
    converged: bool


def neighbor_pairs(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """All unordered 8-neighbor pixel pairs as flat index arrays."""
    idx = np.arange(height * width).reshape(height, width)
    src, dst = [], []
    for dy, dx in NEIGHBOR_OFFSETS:
        a = idx[: height - dy, max(0, -dx) : width - max(0, dx)]
        b = idx[dy:, max(0, dx) : width - max(0, -dx)]
        src.append(a.ravel())
        dst.append(b.ravel())
    return np.concatenate(src), np.concatenate(dst)


def local_pair_weights(
    img: ImageBuffer, chroma: ChromaticityField, t_c: float, t_b: float
) -> PixelPairs:
    """Chromaticity-similarity weights with a dark-pair boost.

    Identical chromaticities give weight 1; a second factor doubles the
    weight when both pixels are dark, where chrominance is mostly noise.
    """
    if t_c <= 0 or t_b <= 0:
        raise ValueError("t_c and t_b must be positive")
    i, j = neighbor_pairs(img.height, img.width)
    vecs = chroma.vectors.reshape(-1, 3)
    dots = np.clip(np.einsum("ij,ij->i", vecs[i], vecs[j]), -1.0, 1.0)
    lum2 = (img.luminance() ** 2).ravel()
    w = np.exp(-((1.0 - dots) ** 2) / t_c**2) * (
        1.0 + np.exp(-(lum2[i] + lum2[j]) / t_b**2)
    )
    return PixelPairs(i, j, w)


def semantic_pair_weights(
    field: SemanticField, height: int, width: int, t_m: float
) -> PixelPairs:
    """Proposal-membership similarity weights over the same pair set."""
    if t_m <= 0:
        raise ValueError("t_m must be positive")
    i, j = neighbor_pairs(height, width)
    dots = np.einsum("ij,ij->i", field.full[i], field.full[j])
    w = np.exp(-((1.0 - np.clip(dots, 0.0, 1.0)) ** 2) / t_m**2)
    return PixelPairs(i, j, w)


def matting_laplacian(base: ImageBuffer, eps_ml: float = 1e-5) -> sp.csr_matrix:
    """Closed-form-matting Laplacian over 3x3 windows of `base`.

    Row sums vanish and the matrix is PSD; vectors affine in the base
    channels lie (numerically) in its null space, which is what lets
    sparse constraints propagate along image structure.
    """
    if base.channels != 3:
        raise ValueError("matting base must have 3 channels")
    if eps_ml <= 0:
        raise ValueError("eps_ml must be positive")
    height, width = base.height, base.width
    if height < 3 or width < 3:
        raise ValueError("matting base must be at least 3x3")
    n = height * width
    win = sliding_window_view(base.data, (3, 3), axis=(0, 1))
    win = win.transpose(0, 1, 3, 4, 2).reshape(-1, 9, 3)
    win_idx = sliding_window_view(
        np.arange(n).reshape(height, width), (3, 3)
    ).reshape(-1, 9)

    mu = win.mean(axis=1, keepdims=True)
    centered = win - mu
    cov = np.einsum("nwc,nwd->ncd", win, win) / 9.0 - np.einsum(
        "nwc,nwd->ncd", mu, mu
    )
    inv = np.linalg.inv(cov + (eps_ml / 9.0) * np.eye(3))
    proj = np.einsum("nwc,ncd->nwd", centered, inv)
    vals = np.eye(9) - (1.0 / 9.0) * (
        1.0 + np.einsum("nwc,nvc->nwv", proj, centered)
    )
    rows = np.repeat(win_idx, 9, axis=1).ravel()
    cols = np.tile(win_idx, (1, 9)).ravel()
    return sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _pair_laplacian(pairs: PixelPairs, n: int) -> sp.csr_matrix:
    data = np.concatenate([pairs.w, pairs.w, -pairs.w, -pairs.w])
    rows = np.concatenate([pairs.i, pairs.j, pairs.i, pairs.j])
    cols = np.concatenate([pairs.i, pairs.j, pairs.j, pairs.i])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def assemble_shading_system(
    log_img: ImageBuffer,
    local_pairs: PixelPairs,
    semantic_pairs: PixelPairs | None,
    matting_base: ImageBuffer | None,
    grid: PatchGrid | None,
    neighbors: NeighborTable | None,
    params: IterationParams,
    gauge_weight: float = DEFAULT_GAUGE_WEIGHT,
) -> ShadingSystem:
    """Build the sparse normal equations for log-shading.

    Patch-consistency rows need `grid` + `neighbors`; the propagation
    block needs `matting_base` (previous reflectance, or a blurred copy
    of the input on the first pass); either may be None to drop the
    corresponding term. The gauge anchors sum(sigma) at n times half
    the mean log-luminance.
    """
    if log_img.domain != "log":
        raise ValueError("expected a log-domain image")
    height, width = log_img.height, log_img.width
    n = height * width
    u = log_img.luminance().ravel()

    matrix = sp.csr_matrix((n, n))
    rhs = np.zeros(n)
    constant = 0.0

    if params.lambda_global > 0 and grid is not None and neighbors is not None:
        centers = grid.centers
        count, k = neighbors.indices.shape
        # row b: +1 at own center, -w at neighbor centers
        rows = np.repeat(np.arange(count), k + 1)
        cols = np.concatenate([centers[:, None], centers[neighbors.indices]], axis=1).ravel()
        vals = np.concatenate(
            [np.ones((count, 1)), -neighbors.weights], axis=1
        ).ravel()
        consistency = sp.coo_matrix((vals, (rows, cols)), shape=(count, n)).tocsr()
        matrix = matrix + params.lambda_global * (consistency.T @ consistency)

    if params.lambda_global > 0 and matting_base is not None:
        if (matting_base.height, matting_base.width) != (height, width):
            raise ValueError("matting base dimensions do not match")
        matrix = matrix + params.lambda_global * matting_laplacian(matting_base)

    if params.lambda_mid > 0 and semantic_pairs is not None:
        matrix = matrix + params.lambda_mid * _pair_laplacian(semantic_pairs, n)

    if params.lambda_local > 0:
        lap = _pair_laplacian(local_pairs, n)
        matrix = matrix + params.lambda_local * lap
        rhs = rhs + params.lambda_local * (lap @ u)
        diff = u[local_pairs.i] - u[local_pairs.j]
        constant += params.lambda_local * float(local_pairs.w @ diff**2)

    gauge_total = n * (u.mean() / 2.0)
    rhs = rhs + gauge_weight * gauge_total
    constant += gauge_weight * gauge_total**2
    return ShadingSystem(matrix, rhs, gauge_weight, gauge_total, constant)


def solve_shading(
    system: ShadingSystem,
    log_img: ImageBuffer,
    init: np.ndarray | None = None,
    tol: float = 1e-6,
    max_iter: int = 2000,
) -> StageOneResult:
    """Minimize the quadratic and split log input into shading + rest."""
    x0 = None if init is None else np.asarray(init, dtype=np.float64).ravel()
    result = conjugate_gradient(
        system.apply,
        system.rhs,
        x0=x0,
        tol=tol,
        max_iter=max_iter,
        diag=system.diagonal(),
    )
    if not result.converged:
        warnings.warn(
            f"shading solve stalled at relative residual {result.residual:.2e}",
            RuntimeWarning,
            stacklevel=2,
        )
    sigma = result.x.reshape(log_img.height, log_img.width)
    rho = log_img.data - sigma[:, :, None]
    return StageOneResult(sigma, rho, result.iterations, result.converged)
