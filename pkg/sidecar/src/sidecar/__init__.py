"""Feature and proposal exporter companion to the intrinsics engine.

Produces the SPFT (patch feature) and SPPR (region proposal) files the
engine's external backend consumes. Strictly an exporter: it writes the
interchange formats from its own implementation and never imports the
engine.
"""

from .features import (
    FC_DIM,
    FeatureExport,
    Fc7Extractor,
    GridSpec,
    SidecarConfig,
    export_patch_features,
    extract_patch_features,
    load_feature_extractor,
    load_rgb,
)
from .interchange import (
    encode_runs,
    grid_origins,
    write_patch_features,
    write_proposals,
)
from .proposals import ProposalExport, export_proposals, generate_proposals

__all__ = [
    "FC_DIM",
    "Fc7Extractor",
    "FeatureExport",
    "GridSpec",
    "ProposalExport",
    "SidecarConfig",
    "encode_runs",
    "export_patch_features",
    "export_proposals",
    "extract_patch_features",
    "generate_proposals",
    "grid_origins",
    "load_feature_extractor",
    "load_rgb",
    "write_patch_features",
    "write_proposals",
]
