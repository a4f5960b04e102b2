"""End-to-end task pipeline shared by the command-line tools and the HTTP
server: build an energy model for a task, run message passing, round the
min-marginals, polish with block descent, and optionally refine through the
pruned linear relaxation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BIG, BinaryLabeling, EnergyModel, PatternBank, total_energy
from .inference import (
    MinMarginals,
    block_icm,
    build_pairwise_model,
    build_restricted_lp,
    estimate_restricted_lp_size,
    relaxed_pixel_values,
    round_min_marginals,
    round_relaxed,
    trws_run,
)
from .lp import solve
from .tasks import (
    GaussianMixture,
    SeedMask,
    TaskError,
    fit_gmm,
    inpainting_unaries,
    segmentation_unaries,
)

LP_THRESHOLD_SCALE = 1e-6
MAX_LP_COLUMNS = 4000
DEFAULT_GMM_COMPONENTS = 10
MAX_GRID_SIDE = 160
COLOR_VARIANCE_FLOOR = (1.0 / 255.0) ** 2


@dataclass(frozen=True)
class InferenceSettings:
    """Resolved inference parameters for one pipeline run."""

    passes: object = 300
    gamma_rule: str = "trws"
    ordering: str = "pixels-first"
    block_size: int = 6
    restricted_lp: bool = False


@dataclass(frozen=True)
class PipelineResult:
    """Labeling plus the evidence trail that produced it."""

    labeling: BinaryLabeling
    energy: float
    lower_bound_trace: tuple
    min_marginals: MinMarginals
    rounded_energy: float
    polished_energy: float
    lp_energy: float | None = None

    @property
    def lower_bound(self) -> float:
        return self.lower_bound_trace[-1]


def check_grid_size(dims: tuple[int, int], force: bool = False,
                    limit: int = MAX_GRID_SIDE) -> None:
    """Reject grids beyond the practical desk-scale ceiling unless forced."""
    w, h = dims
    if not force and max(w, h) > limit:
        raise TaskError(
            f"grid {w}x{h} exceeds the {limit}-pixel limit; "
            "pass force to run anyway"
        )


def build_inpainting_model(bank: PatternBank, mask: SeedMask) -> EnergyModel:
    return EnergyModel(unaries=inpainting_unaries(mask), bank=bank)


def _widen(model: GaussianMixture) -> GaussianMixture:
    """Add one quantization step of color variance to every component.

    Mixtures fitted to a few dozen stroke pixels collapse to near-singular
    covariances, making the likelihood saturate a few hundredths away from
    the stroke colors; a (1/255)^2 floor keeps the density a useful ranking
    over the whole color cube without moving the fitted means.
    """
    eye = np.eye(model.dim) * COLOR_VARIANCE_FLOOR
    return GaussianMixture(
        weights=model.weights,
        means=model.means,
        covariances=model.covariances + eye,
        em_trace=model.em_trace,
    )


def fit_stroke_models(image: np.ndarray, mask: SeedMask,
                      components: int = DEFAULT_GMM_COMPONENTS,
                      seed: int = 0) -> tuple[GaussianMixture,
                                              GaussianMixture]:
    """Fit one color mixture per stroke tag; the component count shrinks to
    the stroke pixel count when strokes are tiny."""
    fg_pixels = image[mask.foreground]
    bg_pixels = image[mask.background]
    if fg_pixels.shape[0] == 0 or bg_pixels.shape[0] == 0:
        raise TaskError(
            "strokes must mark at least one foreground and one "
            "background pixel"
        )
    fg_model = _widen(fit_gmm(fg_pixels, min(components, fg_pixels.shape[0]),
                              seed=seed))
    bg_model = _widen(fit_gmm(bg_pixels, min(components, bg_pixels.shape[0]),
                              seed=seed))
    return fg_model, bg_model


def build_segmentation_model(
    bank: PatternBank,
    image: np.ndarray,
    mask: SeedMask,
    prior_weight: float,
    components: int = DEFAULT_GMM_COMPONENTS,
    seed: int = 0,
) -> tuple[EnergyModel, GaussianMixture, GaussianMixture]:
    """Color image in [0, 1] plus stroke mask to a full energy model."""
    h, w = image.shape[:2]
    if mask.dims != (w, h):
        raise TaskError(f"mask dims {mask.dims} do not match image {(w, h)}")
    fg_model, bg_model = fit_stroke_models(image, mask, components, seed)
    unaries = segmentation_unaries(image, fg_model, bg_model, prior_weight,
                                   mask=mask)
    return EnergyModel(unaries=unaries, bank=bank), fg_model, bg_model


def likelihood_argmax(image: np.ndarray, fg_model: GaussianMixture,
                      bg_model: GaussianMixture,
                      mask: SeedMask | None = None) -> BinaryLabeling:
    """Prior-free segmentation: per-pixel likelihood comparison, with stroke
    pixels forced to their tag."""
    h, w = image.shape[:2]
    flat = image.reshape(-1, image.shape[2])
    fg = fg_model.log_density(flat).reshape(h, w)
    bg = bg_model.log_density(flat).reshape(h, w)
    labels = (fg > bg).astype(np.uint8)
    if mask is not None:
        labels[mask.foreground] = 1
        labels[mask.background] = 0
    return BinaryLabeling(labels)


def _lp_threshold(marginals: MinMarginals) -> float:
    """Pruning slack proportional to the largest per-node value spread.

    Spreads on the order of the hard-constraint magnitude come from seeded
    nodes whose label is already forced, not from inference uncertainty, so
    they are excluded from the scale; otherwise a single seeded pixel would
    inflate the slack enough to keep every label everywhere.
    """
    pix = marginals.pixels
    win = marginals.windows
    parts = [(pix.max(axis=2) - pix.min(axis=2)).ravel()]
    if win.size:
        parts.append((win.max(axis=1) - win.min(axis=1)).ravel())
    spreads = np.concatenate(parts)
    soft = spreads[spreads < 0.5 * BIG]
    scale = float(soft.max()) if soft.size else float(spreads.max())
    return LP_THRESHOLD_SCALE * scale


def run_pipeline(model: EnergyModel, settings: InferenceSettings,
                 progress=None) -> PipelineResult:
    """Message passing, rounding, block descent, optional LP refinement.

    The returned labeling is the best-energy candidate seen; the
    intermediate energies are kept so callers can report the whole chain.
    The LP refinement runs on the dense self-contained solver, so it is
    skipped (lp_energy stays None) when the restricted program would exceed
    MAX_LP_COLUMNS columns or when the solve does not reach optimality.
    """
    pairwise = build_pairwise_model(model)
    state, marginals = trws_run(
        pairwise,
        passes=settings.passes,
        gamma_rule=settings.gamma_rule,
        ordering=settings.ordering,
        progress=progress,
    )
    rounded = round_min_marginals(marginals)
    rounded_energy = total_energy(model, rounded)
    polished = block_icm(model, rounded, block_size=settings.block_size)
    polished_energy = total_energy(model, polished)
    best, best_energy = polished, polished_energy

    lp_energy = None
    if settings.restricted_lp:
        threshold = _lp_threshold(marginals)
        columns, _ = estimate_restricted_lp_size(pairwise, marginals,
                                                 threshold)
        if columns <= MAX_LP_COLUMNS:
            program, maps = build_restricted_lp(pairwise, marginals,
                                                threshold=threshold)
            solution = solve(program)
            if solution.status == "optimal":
                relaxed = relaxed_pixel_values(pairwise, maps,
                                               solution.values)
                candidate = block_icm(model, round_relaxed(relaxed),
                                      block_size=settings.block_size)
                lp_energy = total_energy(model, candidate)
                if lp_energy < best_energy:
                    best, best_energy = candidate, lp_energy

    return PipelineResult(
        labeling=best,
        energy=best_energy,
        lower_bound_trace=state.lower_bound_trace,
        min_marginals=marginals,
        rounded_energy=rounded_energy,
        polished_energy=polished_energy,
        lp_energy=lp_energy,
    )


def min_marginal_map(marginals: MinMarginals) -> np.ndarray:
    """Rescale the per-pixel min-marginal difference to uint8.

    The difference (cost of label 1 minus cost of label 0) maps linearly to
    [1, 255] with 128 at zero, so the decision boundary is the 128-level
    set; a constant map means the difference is zero everywhere.
    """
    diff = marginals.pixels[:, :, 1] - marginals.pixels[:, :, 0]
    scale = float(np.abs(diff).max())
    if scale == 0.0:
        return np.full(diff.shape, 128, dtype=np.uint8)
    scaled = np.rint(128.0 + 127.0 * (diff / scale))
    return np.clip(scaled, 0, 255).astype(np.uint8)


def labeling_to_bytes_image(labeling: BinaryLabeling) -> np.ndarray:
    """{0, 1} labels to a {0, 255} uint8 grayscale image."""
    return (labeling.labels * np.uint8(255)).astype(np.uint8)


def labeling_from_bytes_image(image: np.ndarray) -> BinaryLabeling:
    """Inverse of labeling_to_bytes_image; any nonzero byte is foreground."""
    return BinaryLabeling((np.asarray(image) > 0).astype(np.uint8))
