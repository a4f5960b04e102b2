"""Soft-pattern curvature priors for binary image labeling.

Submodules:

- ``core``: labelings, pattern banks, window geometry, energies
- ``shapes``: continuous shapes, rasterization, training-patch sampling
- ``lp``: dense two-phase simplex and L1-fitting program builder
- ``learning``: pattern-bank training (pointwise and total-cost stages)
- ``inference``: pairwise reformulation, TRW-S / BP, rounding, block
  descent, and the pruned local-polytope relaxation
- ``tasks``: inpainting, GMM segmentation, angular-penalty shortest paths
- ``strokes``: seed-mask rasterization from stroke scripts
- ``pipeline``: model building and the full inference chain per task
- ``cli`` / ``server``: command-line tools and the HTTP job API
- ``pnm``: PGM/PPM binary image I/O
"""

__version__ = "0.1.0"

from .core import (
    BIG,
    BinaryLabeling,
    EnergyModel,
    GridEdge,
    Pattern,
    PatternBank,
    bank_with_specials,
    convert_hard_pattern,
    cutoff_only_bank,
    higher_order_cost,
    is_boundary_location,
    pattern_cost,
    softmin,
    total_energy,
    window_locations,
)
from .inference import (
    MinMarginals,
    PairwiseModel,
    block_icm,
    bp_run,
    build_pairwise_model,
    build_restricted_lp,
    estimate_restricted_lp_size,
    round_min_marginals,
    round_relaxed,
    trws_run,
)
from .learning import TrainingConfig, train_alg1, train_alg2
from .pipeline import (
    InferenceSettings,
    PipelineResult,
    build_inpainting_model,
    build_segmentation_model,
    min_marginal_map,
    run_pipeline,
)
from .strokes import Stroke, StrokeDocument
from .strokes import rasterize as rasterize_strokes
from .tasks import (
    DirectedEdgeGraph,
    GaussianMixture,
    SeedMask,
    baseline_optimal_path,
    baseline_transition_cost,
    fit_gmm,
    inpainting_unaries,
    polyline_cost,
    segmentation_unaries,
)

__all__ = [
    "BIG",
    "BinaryLabeling",
    "EnergyModel",
    "GridEdge",
    "Pattern",
    "PatternBank",
    "bank_with_specials",
    "convert_hard_pattern",
    "cutoff_only_bank",
    "higher_order_cost",
    "is_boundary_location",
    "pattern_cost",
    "softmin",
    "total_energy",
    "window_locations",
    "MinMarginals",
    "PairwiseModel",
    "block_icm",
    "bp_run",
    "build_pairwise_model",
    "build_restricted_lp",
    "estimate_restricted_lp_size",
    "round_min_marginals",
    "round_relaxed",
    "trws_run",
    "TrainingConfig",
    "train_alg1",
    "train_alg2",
    "InferenceSettings",
    "PipelineResult",
    "build_inpainting_model",
    "build_segmentation_model",
    "min_marginal_map",
    "run_pipeline",
    "Stroke",
    "StrokeDocument",
    "rasterize_strokes",
    "DirectedEdgeGraph",
    "GaussianMixture",
    "SeedMask",
    "baseline_optimal_path",
    "baseline_transition_cost",
    "fit_gmm",
    "inpainting_unaries",
    "polyline_cost",
    "segmentation_unaries",
    "__version__",
]
