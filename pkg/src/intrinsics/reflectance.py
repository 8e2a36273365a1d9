"""Sparse-reflectance stage: L1 flattening of the first-stage estimate.

Three families of weighted pairwise color differences — dense local
window pairs, semantically gated mid-level pairs, and global pairs
between representative pixels — enter an L1 objective anchored to the
first-stage reflectance by an L2 data term. Split-Bregman alternation
decouples the L1 parts into shrinkage steps and reduces the rest to an
SPD system that decomposes per color channel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .imgcore import ImageBuffer, LabField
from .params import IterationParams
from .solvers import conjugate_gradient

PAIR_WEIGHT_FLOOR = 1e-4
WINDOW_RADIUS = 5  # 11x11 sampling window
MAX_WINDOW_PAIRS = (2 * WINDOW_RADIUS + 1) ** 2 - 1


@dataclass(frozen=True)
class PairwiseL1Matrix:
    """Rows of the form v * (e_i - e_j), applied per color channel."""

    i: np.ndarray  # (rows,) flat pixel index
    j: np.ndarray
    v: np.ndarray  # (rows,) positive weights
    n: int  # pixel count
    label: str  # "local" | "mid" | "global"

    @property
    def rows(self) -> int:
        return len(self.i)

    def to_sparse(self) -> sp.csr_matrix:
        data = np.concatenate([self.v, -self.v])
        r = np.tile(np.arange(self.rows), 2)
        c = np.concatenate([self.i, self.j])
        return sp.coo_matrix((data, (r, c)), shape=(self.rows, self.n)).tocsr()

    def gram_diagonal(self) -> np.ndarray:
        """diag(M'M) without forming the product."""
        v2 = self.v**2
        return np.bincount(self.i, v2, self.n) + np.bincount(self.j, v2, self.n)

    def dump_matrix(self, path) -> None:
        """Debug dump in Matrix-Market text form."""
        from scipy.io import mmwrite

        mmwrite(str(path), self.to_sparse())


@dataclass(frozen=True)
class StageTwoResult:
    """Flattened reflectance and the shading that exactly reconstructs."""

    reflectance: np.ndarray  # (H, W, 3) linear, in [eps, 1]
    shading: np.ndarray  # (H, W, 3), input / reflectance
    iterations: int
    converged: bool


def pair_weights(
    r_i: np.ndarray,
    r_j: np.ndarray,
    t: float,
    extra_i: np.ndarray | None = None,
    extra_j: np.ndarray | None = None,
) -> np.ndarray:
    """Color-affinity weights exp(-||r_i - r_j||^2 / 2t^2), optionally
    multiplied by the same kernel on a second (semantic) vector pair."""
    if t <= 0:
        raise ValueError("t must be positive")
    d2 = np.sum((np.asarray(r_i) - np.asarray(r_j)) ** 2, axis=-1)
    w = np.exp(-d2 / (2.0 * t * t))
    if extra_i is not None:
        e2 = np.sum((np.asarray(extra_i) - np.asarray(extra_j)) ** 2, axis=-1)
        w = w * np.exp(-e2 / (2.0 * t * t))
    return w


def sample_window_pairs(
    height: int, width: int, sample_count: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per pixel, `sample_count` partners drawn without replacement from
    its 11x11 window (all of them when fewer are available)."""
    if sample_count > MAX_WINDOW_PAIRS:
        raise ValueError(f"sample_count must be <= {MAX_WINDOW_PAIRS}")
    n = height * width
    span = np.arange(-WINDOW_RADIUS, WINDOW_RADIUS + 1)
    offsets = np.array(
        [(dy, dx) for dy in span for dx in span if (dy, dx) != (0, 0)]
    )
    ys, xs = np.divmod(np.arange(n), width)
    oy, ox = offsets[:, 0], offsets[:, 1]
    ny = ys[:, None] + oy[None, :]
    nx = xs[:, None] + ox[None, :]
    valid = (ny >= 0) & (ny < height) & (nx >= 0) & (nx < width)

    keys = np.random.default_rng(seed).random((n, len(offsets)))
    keys[~valid] += 2.0  # push out-of-bounds partners behind all valid keys
    order = np.argsort(keys, axis=1, kind="stable")[:, :sample_count]
    chosen_valid = np.take_along_axis(valid, order, axis=1)
    rel = oy * width + ox
    i = np.repeat(np.arange(n), sample_count).reshape(n, sample_count)
    j = i + rel[order]
    return i[chosen_valid], j[chosen_valid]


def _filtered(i, j, v, n, label) -> PairwiseL1Matrix:
    keep = v >= PAIR_WEIGHT_FLOOR
    return PairwiseL1Matrix(i[keep], j[keep], v[keep], n, label)


def build_local_pairs(
    lab: LabField, t: float, sample_count: int = 20, seed: int = 0
) -> PairwiseL1Matrix:
    """Window-sampled pairs weighted by color affinity alone."""
    h, w = lab.values.shape[:2]
    colors = lab.values.reshape(-1, 3)
    i, j = sample_window_pairs(h, w, min(sample_count, MAX_WINDOW_PAIRS), seed)
    v = pair_weights(colors[i], colors[j], t)
    return _filtered(i, j, v, h * w, "local")


def build_mid_pairs(
    lab: LabField,
    reduced: np.ndarray,
    t: float,
    sample_count: int = 20,
    seed: int = 0,
) -> PairwiseL1Matrix:
    """Window-sampled pairs gated by color and semantic affinity."""
    h, w = lab.values.shape[:2]
    colors = lab.values.reshape(-1, 3)
    if reduced.shape[0] != h * w:
        raise ValueError("reduced semantic field size does not match image")
    i, j = sample_window_pairs(h, w, min(sample_count, MAX_WINDOW_PAIRS), seed)
    v = pair_weights(colors[i], colors[j], t, reduced[i], reduced[j])
    return _filtered(i, j, v, h * w, "mid")


def build_global_pairs(
    rep_pixels: np.ndarray, lab: LabField, t: float
) -> PairwiseL1Matrix:
    """All unordered pairs among the representative pixels."""
    n = lab.values.shape[0] * lab.values.shape[1]
    reps = np.asarray(rep_pixels)
    if len(reps) < 2:
        warnings.warn(
            "fewer than 2 representative pixels; global term is empty",
            RuntimeWarning,
            stacklevel=2,
        )
        empty = np.empty(0, dtype=np.int64)
        return PairwiseL1Matrix(empty, empty, np.empty(0), n, "global")
    colors = lab.values.reshape(-1, 3)
    ai, aj = np.triu_indices(len(reps), k=1)
    i, j = reps[ai], reps[aj]
    v = pair_weights(colors[i], colors[j], t)
    return _filtered(i, j, v, n, "global")


def shrink(x: np.ndarray, tau: float) -> np.ndarray:
    """Soft threshold: sign(x) * max(|x| - tau, 0)."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def solve_quadratic_subproblem(
    rho: np.ndarray,
    terms: list[tuple[sp.csr_matrix, float, np.ndarray]],
    gamma_anchor: float,
    theta: float,
    z0: np.ndarray,
    diag: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, int, bool]:
    """One coupled L2 solve of the alternation, channel by channel.

    Solves (gamma_a I + theta sum_k gamma_k M_k'M_k) z =
    gamma_a rho + theta sum_k gamma_k M_k'(target_k) where each term is
    (M_k, gamma_k, target_k); rho, z are (n, channels).
    """

    def matvec(x):
        out = gamma_anchor * x
        for mat, gamma, _ in terms:
            out = out + theta * gamma * (mat.T @ (mat @ x))
        return out

    z = np.empty_like(rho)
    total_iters, all_converged = 0, True
    for c in range(rho.shape[1]):
        b = gamma_anchor * rho[:, c]
        for mat, gamma, target in terms:
            b = b + theta * gamma * (mat.T @ target[:, c])
        res = conjugate_gradient(
            matvec, b, x0=z0[:, c], tol=tol, max_iter=max_iter, diag=diag
        )
        z[:, c] = res.x
        total_iters += res.iterations
        all_converged &= res.converged
    return z, total_iters, all_converged


def flattening_objective(
    z: np.ndarray,
    rho: np.ndarray,
    terms: list[tuple[PairwiseL1Matrix, float]],
    gamma_anchor: float = 1.0,
) -> float:
    """Composite objective the alternation minimizes at its fixed point:
    gamma_a ||z - rho||^2 + sum_k gamma_k^2 ||M_k z||_1."""
    value = gamma_anchor * float(np.sum((z - rho) ** 2))
    for matrix, gamma in terms:
        diff = matrix.v[:, None] * (z[matrix.i] - z[matrix.j])
        value += gamma**2 * float(np.abs(diff).sum())
    return value


def solve_sparse_reflectance(
    img: ImageBuffer,
    rho_star_linear: np.ndarray,
    local: PairwiseL1Matrix | None,
    mid: PairwiseL1Matrix | None,
    global_: PairwiseL1Matrix | None,
    params: IterationParams,
    gamma_anchor: float = 1.0,
    sweeps: int | None = None,
) -> StageTwoResult:
    """Split-Bregman alternation flattening rho* into reflectance.

    Starts from z = rho*, alternates the coupled L2 solve with per-term
    shrinkage d_k = shrink(M_k z + b_k, gamma_k / 2 theta) and Bregman
    updates b_k += M_k z - d_k, then clamps z into [eps, 1] and reads
    shading off as input / reflectance.
    """
    height, width = img.height, img.width
    n = height * width
    rho = rho_star_linear.reshape(n, 3)
    theta = params.coupling
    sweeps = params.bregman_sweeps if sweeps is None else sweeps

    weighted = [
        (matrix, gamma)
        for matrix, gamma in (
            (local, params.gamma_local),
            (mid, params.gamma_mid),
            (global_, params.gamma_global),
        )
        if matrix is not None and matrix.rows > 0 and gamma > 0
    ]
    sparse = [(m.to_sparse(), g) for m, g in weighted]
    diag = gamma_anchor + theta * sum(
        g * m.gram_diagonal() for m, g in weighted
    ) if weighted else np.full(n, gamma_anchor)

    z = rho.copy()
    d = [np.zeros((m.rows, 3)) for m, _ in weighted]
    b = [np.zeros((m.rows, 3)) for m, _ in weighted]
    total_iters, all_converged = 0, True
    for _ in range(sweeps):
        terms = [
            (mat, gamma, d[k] - b[k]) for k, (mat, gamma) in enumerate(sparse)
        ]
        z, iters, ok = solve_quadratic_subproblem(
            rho, terms, gamma_anchor, theta, z, diag,
            params.cg_tol, params.cg_max_iter,
        )
        total_iters += iters
        all_converged &= ok
        for k, (mat, gamma) in enumerate(sparse):
            mz = mat @ z
            d[k] = shrink(mz + b[k], gamma / (2.0 * theta))
            b[k] = b[k] + mz - d[k]
    if not all_converged:
        warnings.warn(
            "inner reflectance solve did not reach tolerance; "
            "using best iterates",
            RuntimeWarning,
            stacklevel=2,
        )

    reflectance = np.clip(z.reshape(height, width, 3), params.eps, 1.0)
    shading = img.data / reflectance
    return StageTwoResult(reflectance, shading, total_iters, all_converged)
