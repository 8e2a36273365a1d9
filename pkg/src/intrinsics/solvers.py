"""Conjugate-gradient solver for the symmetric positive (semi)definite
systems produced by both optimization stages.

Hand-rolled rather than delegated so the stopping rule, preconditioning
and iterate bookkeeping are exactly what the energy tests assume: a
relative-residual criterion against ||b||, optional Jacobi scaling, and
on non-convergence the best iterate seen plus a warning flag instead of
an exception.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual: float  # relative to ||b||
    energies: list = field(default_factory=list)


def conjugate_gradient(
    apply_a: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-6,
    max_iter: int = 2000,
    diag: np.ndarray | None = None,
    track_energy: bool = False,
) -> SolveResult:
    """Preconditioned CG for apply_a(x) = b with A symmetric PSD.

    `diag`, when given, supplies a Jacobi preconditioner. The returned
    residual is ||b - Ax|| / ||b||; if it never reaches `tol` within
    `max_iter` steps the lowest-residual iterate is returned with
    converged=False.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)

    if diag is not None:
        inv_diag = 1.0 / np.where(np.abs(diag) > 0, diag, 1.0)
        precondition = lambda r: inv_diag * r
    else:
        precondition = lambda r: r

    norm_b = np.linalg.norm(b)
    if norm_b == 0:
        return SolveResult(np.zeros_like(b), 0, True, 0.0)

    def energy(v: np.ndarray) -> float:
        return float(0.5 * v @ apply_a(v) - b @ v)

    r = b - apply_a(x)
    best_x, best_res = x.copy(), np.linalg.norm(r) / norm_b
    energies = [energy(x)] if track_energy else []
    if best_res <= tol:
        return SolveResult(x, 0, True, best_res, energies)

    z = precondition(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        pap = p @ ap
        if pap <= 0:
            break  # numerically lost positive-definiteness; keep best
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        res = np.linalg.norm(r) / norm_b
        if track_energy:
            energies.append(energy(x))
        if res < best_res:
            best_res, best_x = res, x.copy()
        if res <= tol:
            return SolveResult(x, it, True, res, energies)
        z = precondition(r)
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
    return SolveResult(best_x, max_iter, False, best_res, energies)
