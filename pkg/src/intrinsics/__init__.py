"""Single-image intrinsic decomposition: I = reflectance * shading.

The engine alternates a quadratic shading-smoothness solve with an
L1 reflectance-flattening solve, guided by patch- and region-level
semantic features, and ships with relighting applications and an
evaluation harness (WHDR / LMSE).
"""

from .imgcore import (
    ImageBuffer,
    chromaticity,
    gaussian_filter,
    load_image,
    save_image,
    to_lab_suppressed,
    to_log,
)
from .params import VARIANTS, IterationParams
from .pipeline import (
    DecompositionResult,
    IterationSnapshot,
    load_bundle,
    merge_components,
    recolor_illumination,
    relight_intensity,
    run_decomposition,
    write_bundle,
)

__all__ = [
    "ImageBuffer",
    "load_image",
    "save_image",
    "to_log",
    "chromaticity",
    "to_lab_suppressed",
    "gaussian_filter",
    "IterationParams",
    "VARIANTS",
    "DecompositionResult",
    "IterationSnapshot",
    "run_decomposition",
    "merge_components",
    "recolor_illumination",
    "relight_intensity",
    "write_bundle",
    "load_bundle",
]
