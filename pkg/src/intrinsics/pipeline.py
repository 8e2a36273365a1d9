"""Decomposition driver: alternate the two stages, merge, relight.

The driver computes features once, then runs k rounds of the quadratic
shading solve followed by the L1 reflectance solve, re-estimating the
data-dependent pair weights from the current reflectance each round and
re-balancing the term weights on a geometric schedule. The two stages'
final outputs are merged through smoothed fractional residues, and the
merged components feed the two relighting applications.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from .imgcore import (
    ImageBuffer,
    chromaticity,
    gaussian_filter,
    lab_to_rgb,
    rgb_to_lab,
    save_image,
    to_lab_suppressed,
    to_log,
)
from .params import IterationParams
from .reflectance import (
    build_global_pairs,
    build_local_pairs,
    build_mid_pairs,
    flattening_objective,
    solve_sparse_reflectance,
)
from .semantics import (
    ProposalSet,
    build_grid,
    builtin_patch_descriptor,
    builtin_proposals,
    knn,
    lle_weights,
    load_patch_features,
    load_proposals,
    representative_pixels,
    semantic_field,
)
from .shading import (
    assemble_shading_system,
    local_pair_weights,
    semantic_pair_weights,
    solve_shading,
)

FIRST_PASS_BLUR = 2.0  # smoothing of the input used as the first prior base
MERGE_BLUR = 5.0

BUNDLE_IMAGES = (
    "reflectance.png",
    "shading.png",
    "merged_reflectance.png",
    "merged_shading.png",
    "illum_color.png",
)


@dataclass(frozen=True)
class IterationSnapshot:
    """One round's outputs: log-domain split and linear flattened pair."""

    log_shading: np.ndarray  # (H, W)
    log_reflectance: np.ndarray  # (H, W, 3)
    reflectance: np.ndarray  # (H, W, 3) linear
    shading: np.ndarray  # (H, W, 3) linear
    smooth_energy: float  # quadratic energy at the shading solution
    sparse_objective: float  # L1 composite objective at the reflectance


@dataclass(frozen=True)
class DecompositionResult:
    history: tuple[IterationSnapshot, ...]
    merged_reflectance: np.ndarray  # (H, W, 3)
    merged_shading: np.ndarray  # (H, W, 3)
    illumination: np.ndarray  # (H, W, 3) smoothed fractional residue
    params: IterationParams  # effective (variant-applied) parameters
    backend: str  # "builtin" or "external"
    warnings: tuple[str, ...]
    timings: dict


def _stage_zero(img: ImageBuffer, params: IterationParams, features_path, proposals_path):
    """Features, neighbors, proposals and derived fields, computed once."""
    notes: list[str] = []
    grid = neighbors = None
    if params.patch_size <= min(img.width, img.height):
        grid = build_grid(img.width, img.height, params.patch_size, params.patch_stride)
        if features_path is not None:
            feats = load_patch_features(features_path, grid)
        else:
            feats = builtin_patch_descriptor(img, grid)
        k_eff = min(params.knn, grid.patch_count - 1)
        if k_eff >= 1:
            if k_eff < params.knn:
                notes.append(
                    f"patch neighborhood reduced to {k_eff} (only "
                    f"{grid.patch_count} patches)"
                )
            neighbors = lle_weights(feats, knn(feats, k_eff))
        else:
            notes.append("single-patch grid: patch-consistency term dropped")
    else:
        notes.append("image smaller than patch size: patch-consistency term dropped")

    if proposals_path is not None:
        props = load_proposals(proposals_path, img.width, img.height)
        if props.count > params.proposal_cap:
            order = np.argsort(-props.scores, kind="stable")[: params.proposal_cap]
            props = ProposalSet(
                props.width, props.height, props.masks[order], props.scores[order]
            )
    else:
        props = builtin_proposals(img, p_max=params.proposal_cap)
    d_eff = min(params.reduced_dim, props.count)
    if d_eff < params.reduced_dim:
        notes.append(f"semantic reduction clipped to {d_eff} (only {props.count} proposals)")
    field = semantic_field(props, img.width, img.height, d=d_eff)
    reps = representative_pixels(props, img, q_max=params.representative_cap)
    return grid, neighbors, field, reps, notes


def run_decomposition(
    img: ImageBuffer,
    params: IterationParams | None = None,
    features_path=None,
    proposals_path=None,
) -> DecompositionResult:
    """Alternate the smooth-shading and sparse-reflectance solves.

    Patch features and proposals come from the builtin extractors unless
    interchange files are supplied. Pair weights that depend on the
    reflectance estimate are rebuilt every round; the global pairs and
    the input-derived weights are fixed. Solver warnings are collected
    rather than raised.
    """
    params = (params or IterationParams()).effective()
    timings: dict = {}
    caught: list[str] = []
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as grabbed:
        warnings.simplefilter("always")
        grid, neighbors, field, reps, notes = _stage_zero(
            img, params, features_path, proposals_path
        )
        caught.extend(notes)
        log_img = to_log(img, eps=params.eps)
        chroma = chromaticity(img)
        local_w = local_pair_weights(img, chroma, params.chroma_sigma, params.dark_sigma)
        semantic_w = semantic_pair_weights(
            field, img.height, img.width, params.semantic_sigma
        )
        input_lab = to_lab_suppressed(img, suppress=params.luminance_suppress)
        global_pairs = build_global_pairs(
            reps.pixel_indices, input_lab, params.color_sigma
        )
    caught.extend(str(w.message) for w in grabbed)
    timings["features"] = time.perf_counter() - t0

    history: list[IterationSnapshot] = []
    current = params
    prior_base = gaussian_filter(img, FIRST_PASS_BLUR)
    sigma_init = None
    stage1_time = stage2_time = 0.0
    for it in range(params.iterations):
        with warnings.catch_warnings(record=True) as grabbed:
            warnings.simplefilter("always")
            t0 = time.perf_counter()
            system = assemble_shading_system(
                log_img, local_w, semantic_w, prior_base, grid, neighbors, current
            )
            stage_one = solve_shading(
                system,
                log_img,
                init=sigma_init,
                tol=current.cg_tol,
                max_iter=current.cg_max_iter,
            )
            stage1_time += time.perf_counter() - t0

            t0 = time.perf_counter()
            rho_linear = np.exp(stage_one.log_reflectance)
            estimate = ImageBuffer(np.clip(rho_linear, 0.0, 1.0))
            est_lab = to_lab_suppressed(estimate, suppress=current.luminance_suppress)
            local_pairs = build_local_pairs(
                est_lab, current.color_sigma, current.sample_count, current.seed
            )
            mid_pairs = build_mid_pairs(
                est_lab, field.reduced, current.color_sigma,
                current.sample_count, current.seed,
            )
            stage_two = solve_sparse_reflectance(
                img, rho_linear, local_pairs, mid_pairs, global_pairs, current
            )
            stage2_time += time.perf_counter() - t0
        caught.extend(f"round {it + 1}: {w.message}" for w in grabbed)

        objective = flattening_objective(
            stage_two.reflectance.reshape(-1, 3),
            rho_linear.reshape(-1, 3),
            [
                (local_pairs, current.gamma_local),
                (mid_pairs, current.gamma_mid),
                (global_pairs, current.gamma_global),
            ],
        )
        history.append(
            IterationSnapshot(
                stage_one.log_shading,
                stage_one.log_reflectance,
                stage_two.reflectance,
                stage_two.shading,
                system.energy(stage_one.log_shading.ravel()),
                objective,
            )
        )
        prior_base = ImageBuffer(np.clip(stage_two.reflectance, 0.0, 1.0))
        sigma_init = stage_one.log_shading.ravel()
        if params.schedule_on and it + 1 < params.iterations:
            current = current.scheduled()
    timings["smooth_stage"] = stage1_time
    timings["sparse_stage"] = stage2_time

    t0 = time.perf_counter()
    last = history[-1]
    merged_r, merged_s, illum = merge_components(
        last.reflectance,
        last.shading,
        np.exp(last.log_reflectance),
        np.exp(last.log_shading),
        img,
        eps=params.eps,
    )
    timings["merge"] = time.perf_counter() - t0
    return DecompositionResult(
        tuple(history),
        merged_r,
        merged_s,
        illum,
        params,
        "external" if features_path or proposals_path else "builtin",
        tuple(caught),
        timings,
    )


def merge_components(
    reflectance: np.ndarray,
    shading: np.ndarray,
    rho_linear: np.ndarray,
    sigma_linear: np.ndarray,
    img: ImageBuffer,
    sigma_blur: float = MERGE_BLUR,
    eps: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Blend the two stages through smoothed fractional residues.

    The residues compare the input against each stage's cross
    reconstruction; their smoothed mean C corrects the sparse-stage
    shading from one side and the smooth-stage shading from the other.
    The merged reflectance is defined as input over merged shading, so
    reconstruction stays exact.
    """
    if sigma_linear.ndim == 2:
        sigma_linear = sigma_linear[:, :, None]
    i_data = np.maximum(img.data, eps)
    c1 = i_data / np.maximum(reflectance * sigma_linear, eps)
    c2 = i_data / np.maximum(rho_linear * shading, eps)
    illum = gaussian_filter((c1 + c2) / 2.0, sigma_blur)
    safe_illum = np.maximum(illum, eps)
    merged_shading = (shading / safe_illum + sigma_linear * safe_illum) / 2.0
    merged_reflectance = i_data / np.maximum(merged_shading, eps)
    return merged_reflectance, merged_shading, illum


def recolor_illumination(
    merged_reflectance: np.ndarray,
    merged_shading: np.ndarray,
    target_ab: tuple[float, float],
    percentile: float = 95.0,
    decay_frac: float = 0.15,
) -> ImageBuffer:
    """Tint the illumination toward a target chroma around the light source.

    The brightest shading percentile marks the source region; the tint
    strength follows the local shading intensity and decays
    exponentially with distance from that region.
    """
    if not 0.0 < percentile < 100.0:
        raise ValueError("percentile must lie in (0, 100)")
    height, width = merged_shading.shape[:2]
    lum = merged_shading.mean(axis=2)
    mask = lum >= np.percentile(lum, percentile)
    if not mask.any():
        warnings.warn(
            "no pixels above the source percentile; tinting globally",
            RuntimeWarning,
            stacklevel=2,
        )
        dist = np.zeros_like(lum)
    else:
        dist = distance_transform_edt(~mask)
    decay = decay_frac * np.hypot(height, width)
    strength = lum * np.exp(-dist / decay)

    lab = rgb_to_lab(merged_shading)
    lab[..., 1] += strength * target_ab[0]
    lab[..., 2] += strength * target_ab[1]
    tinted = lab_to_rgb(lab)
    out = np.clip(merged_reflectance * tinted, 0.0, 1.0)
    return ImageBuffer(out)


def relight_intensity(
    reflectance: np.ndarray,
    shading: np.ndarray,
    rho_linear: np.ndarray,
    sigma_linear: np.ndarray,
    img: ImageBuffer,
    sigma_blur: float = MERGE_BLUR,
    scale: float = 0.5,
) -> ImageBuffer:
    """Brighten using the disagreement between the two stages.

    The additive and multiplicative residues between the stages carry
    the illumination detail each stage explained away; smoothed and fed
    back, they lift the under-lit regions. The sum is min-max rescaled
    into display range.
    """
    if sigma_linear.ndim == 2:
        sigma_linear = sigma_linear[:, :, None]
    e1 = ((rho_linear - reflectance) + (shading - sigma_linear)) / 2.0
    e2 = (
        rho_linear / np.maximum(reflectance, 1e-12)
        + shading / np.maximum(sigma_linear, 1e-12)
    ) / 2.0
    out = img.data + gaussian_filter(e1, sigma_blur) + gaussian_filter(e2, sigma_blur) * scale
    lo, hi = out.min(), out.max()
    if hi - lo < 1e-12:
        return ImageBuffer(np.zeros_like(out))
    return ImageBuffer((out - lo) / (hi - lo))


def write_bundle(result: DecompositionResult, img: ImageBuffer, out_dir) -> Path:
    """Write the result directory: PNGs, history, arrays, metadata."""
    out = Path(out_dir)
    (out / "iters").mkdir(parents=True, exist_ok=True)
    last = result.history[-1]
    save_image(out / "reflectance.png", ImageBuffer(np.clip(last.reflectance, 0, 1)))
    save_image(out / "shading.png", ImageBuffer(np.clip(last.shading, 0, 1)))
    save_image(
        out / "merged_reflectance.png",
        ImageBuffer(np.clip(result.merged_reflectance, 0, 1)),
    )
    save_image(
        out / "merged_shading.png", ImageBuffer(np.clip(result.merged_shading, 0, 1))
    )
    # residues hover around 1.0; halve into displayable range
    save_image(out / "illum_color.png", ImageBuffer(np.clip(result.illumination / 2, 0, 1)))
    for idx, snap in enumerate(result.history, start=1):
        stem = out / "iters" / f"{idx:02d}"
        save_image(
            Path(f"{stem}_reflectance.png"), ImageBuffer(np.clip(snap.reflectance, 0, 1))
        )
        save_image(Path(f"{stem}_shading.png"), ImageBuffer(np.clip(snap.shading, 0, 1)))
        sigma_vis = np.exp(snap.log_shading)[:, :, None].repeat(3, axis=2)
        save_image(Path(f"{stem}_sigma.png"), ImageBuffer(np.clip(sigma_vis, 0, 1)))
    np.savez(
        out / "components.npz",
        input=img.data,
        log_shading=last.log_shading,
        log_reflectance=last.log_reflectance,
        reflectance=last.reflectance,
        shading=last.shading,
        merged_reflectance=result.merged_reflectance,
        merged_shading=result.merged_shading,
        illumination=result.illumination,
    )
    metadata = {
        "params": result.params.to_dict(),
        "backend": result.backend,
        "warnings": list(result.warnings),
        "timings": result.timings,
        "energies": [
            {
                "round": idx + 1,
                "smooth_energy": snap.smooth_energy,
                "sparse_objective": snap.sparse_objective,
            }
            for idx, snap in enumerate(result.history)
        ],
    }
    (out / "metadata.json").write_text(json.dumps(metadata, indent=2, sort_keys=True))
    return out


def load_bundle(bundle_dir) -> dict:
    """Read back the arrays a relighting command needs."""
    path = Path(bundle_dir) / "components.npz"
    if not path.exists():
        raise ValueError(f"bundle is missing components.npz: {bundle_dir}")
    with np.load(path) as data:
        return {key: data[key] for key in data.files}
