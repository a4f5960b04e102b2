"""Pattern bank training.

Two stages are provided.  The first fits each pattern to pointwise curvature
targets by alternating nearest-pattern assignment with per-cluster L1 refits.
The second recalibrates the bank against whole-shape cost totals, absorbing
the systematic overcount that comes from summing overlapping windows along a
boundary.  Both stages keep every pattern inside the non-negative envelope
admissible set and never touch the three special patterns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    PatternBank,
    Pattern,
    bank_with_specials,
    boundary_model_cost,
    higher_order_total,
    patch_matrix,
)
from .lp import GE, LE, LinearProgram, LpError, solve, solve_l1_fit
from .shapes import ShapeSample, TrainingSample, sample_quadratic_patch

N_SPECIAL = 3

# cluster-constant pixels get this multiple of f_max as a guarding weight
PROTECTION_SCALE = 10.0


class TrainingDataError(RuntimeError):
    """Raised when the training set cannot populate every pattern bin."""


@dataclass(frozen=True)
class TrainingConfig:
    """Settings for pointwise bank training.

    The regular patterns are laid out as one per (orientation bin, curvature
    bin) pair, so the bank holds ``n_orientations * n_curvature_bins``
    fitted patterns after the three special ones.
    """

    n_samples: int = 10_000
    n_orientations: int = 32
    n_curvature_bins: int = 3
    side: int = 8
    f_max: float = 2.0
    max_iterations: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.n_orientations < 1 or self.n_curvature_bins < 1:
            raise ValueError("bin counts must be positive")
        if self.side < 4:
            raise ValueError("side must be at least 4")
        if self.f_max <= 0:
            raise ValueError("f_max must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")

    @property
    def n_regular(self) -> int:
        return self.n_orientations * self.n_curvature_bins


@dataclass(frozen=True)
class ErrorTrace:
    """Per-iteration mean absolute pointwise errors, entry 0 being the
    freshly initialized bank."""

    train_errors: tuple
    test_errors: tuple

    def __post_init__(self):
        tr = tuple(float(v) for v in self.train_errors)
        te = tuple(float(v) for v in self.test_errors)
        if len(tr) != len(te):
            raise ValueError("train and test traces must have equal length")
        if any(v < 0 for v in tr + te):
            raise ValueError("errors must be non-negative")
        object.__setattr__(self, "train_errors", tr)
        object.__setattr__(self, "test_errors", te)

    def __len__(self) -> int:
        return len(self.train_errors)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "train_error", "test_error"])
            for i, (tr, te) in enumerate(zip(self.train_errors, self.test_errors)):
                writer.writerow([i, repr(tr), repr(te)])

    @staticmethod
    def read_csv(path) -> "ErrorTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = rows[1:]
        return ErrorTrace(
            tuple(float(r[1]) for r in body), tuple(float(r[2]) for r in body)
        )


def orientation_bins(angles, n_orientations: int) -> np.ndarray:
    """Equal-width bins of the tangent angle over [0, 2pi)."""
    a = np.asarray(angles, dtype=float) % (2.0 * np.pi)
    idx = np.floor(a * n_orientations / (2.0 * np.pi)).astype(int)
    return np.clip(idx, 0, n_orientations - 1)


def curvature_bin_edges(kappas, n_bins: int) -> np.ndarray:
    """Interior bin edges placed at empirical quantiles of |kappa|."""
    mags = np.abs(np.asarray(kappas, dtype=float))
    qs = np.arange(1, n_bins) / n_bins
    return np.quantile(mags, qs)


def bin_samples(samples, cfg: TrainingConfig):
    """Map each sample to its (orientation, curvature) bin pair.

    Returns (orientation indices, curvature indices, curvature edges).
    """
    angles = np.array([s.tangent_angle for s in samples])
    kappas = np.array([s.kappa for s in samples])
    edges = curvature_bin_edges(kappas, cfg.n_curvature_bins)
    o_idx = orientation_bins(angles, cfg.n_orientations)
    c_idx = np.digitize(np.abs(kappas), edges)
    return o_idx, c_idx, edges


def sample_training_set(cfg: TrainingConfig, seed_offset: int = 0,
                        max_rounds: int = 10) -> list:
    """Draw a quadratic-arc training set whose bins are all populated.

    A draw that leaves some (orientation, curvature) bin empty is discarded
    and retried with a stepped seed; after ``max_rounds`` failures a
    TrainingDataError is raised.
    """
    for attempt in range(max_rounds):
        rng = np.random.default_rng(cfg.seed + seed_offset + attempt)
        samples = [
            sample_quadratic_patch(rng, cfg.side, cfg.f_max)
            for _ in range(cfg.n_samples)
        ]
        o_idx, c_idx, _ = bin_samples(samples, cfg)
        flat = o_idx * cfg.n_curvature_bins + c_idx
        if np.unique(flat).size == cfg.n_regular:
            return samples
    raise TrainingDataError(
        f"could not populate all {cfg.n_regular} bins in {max_rounds} draws"
    )


def refit_pattern(patches, targets, side: int,
                  protection: float | None = None) -> Pattern:
    """L1-optimal affine fit of one cluster, kept inside the admissible set.

    Minimizes the summed absolute error of <w, patch> + c against the
    targets subject to sum_v min(w_v, 0) + c >= 0.

    The fit only pins the weights of pixels that vary within the cluster;
    constant pixels leave a wide optimal face.  Among those equally optimal
    fits we pick the protective one: always-background pixels get weight
    +protection and always-foreground pixels -protection with the constant
    raised to compensate, which leaves every in-cluster cost and the
    admissibility margin unchanged while making the pattern expensive on
    labelings that deviate from the cluster's fixed surroundings.
    """
    X = np.asarray(patches, dtype=float).reshape(len(patches), -1)
    t = np.asarray(targets, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cluster must be non-empty")
    if X.shape[1] != side * side:
        raise ValueError(f"patches must have {side * side} entries")
    if protection is None:
        protection = PROTECTION_SCALE * max(1.0, float(t.max()))
    always0 = X.max(axis=0) == 0.0
    always1 = X.min(axis=0) == 1.0
    varying = ~(always0 | always1)
    if varying.any():
        res = solve_l1_fit(X[:, varying], t, nonneg_envelope=True)
        w_var = res.weights
        c_hat = res.constant
        c_hat = max(c_hat, -float(np.minimum(w_var, 0.0).sum()))
    else:
        w_var = np.zeros(0)
        c_hat = max(0.0, float(np.median(t)))
    w = np.zeros(side * side)
    w[varying] = w_var
    w[always0] = protection
    w[always1] = -protection
    c = c_hat + protection * float(always1.sum())
    return Pattern(side, w, c)


def _cost_matrix(bank: PatternBank, patches: np.ndarray) -> np.ndarray:
    """Per (patch, pattern) affine costs; rows are patches."""
    return patches @ bank.weight_matrix.T + bank.constants


def _stack_patches(samples) -> np.ndarray:
    return np.stack([s.patch for s in samples]).astype(float)


def assign_patterns(bank: PatternBank, samples) -> np.ndarray:
    """Index of the cheapest pattern for every sample, ties to the lowest."""
    costs = _cost_matrix(bank, _stack_patches(samples))
    return np.argmin(costs, axis=1)


def evaluate_pointwise(bank: PatternBank, samples) -> float:
    """Mean absolute gap between envelope value and curvature target."""
    X = _stack_patches(samples)
    targets = np.array([s.target_cost for s in samples])
    return _envelope_error(bank, X, targets)


def _envelope_error(bank: PatternBank, X: np.ndarray,
                    targets: np.ndarray) -> float:
    costs = _cost_matrix(bank, X)
    return float(np.mean(np.abs(costs.min(axis=1) - targets)))


def init_bank(samples, cfg: TrainingConfig) -> PatternBank:
    """Fit one pattern per (orientation, curvature) bin, then prepend the
    special patterns.  Raises TrainingDataError if any bin is empty."""
    o_idx, c_idx, _ = bin_samples(samples, cfg)
    X = _stack_patches(samples)
    targets = np.array([s.target_cost for s in samples])
    guard = PROTECTION_SCALE * cfg.f_max
    regular = []
    for o in range(cfg.n_orientations):
        for b in range(cfg.n_curvature_bins):
            mask = (o_idx == o) & (c_idx == b)
            if not mask.any():
                raise TrainingDataError(
                    f"empty bin: orientation {o}, curvature interval {b}"
                )
            regular.append(
                refit_pattern(X[mask], targets[mask], cfg.side, guard)
            )
    return bank_with_specials(regular, cfg.side, cfg.f_max)


def train_alg1(samples, test_samples, cfg: TrainingConfig,
               initial_bank: PatternBank | None = None):
    """Alternate nearest-pattern assignment with per-cluster L1 refits.

    Each refit round recomputes the cheapest-pattern assignment, solves one
    L1 fit per populated cluster, and then accepts the candidate patterns
    one cluster at a time, keeping a candidate only when it does not raise
    the mean training error.  The alternating scheme on its own has no
    descent guarantee (a refit tuned to its own cluster can undercut the
    targets of samples assigned elsewhere), so this acceptance sweep is
    what makes the recorded training trace non-increasing.

    Stops at the assignment fixpoint or after ``cfg.max_iterations`` refit
    rounds.  Returns the final bank and the error trace, whose entry 0
    describes the initial bank.  Special patterns are never refitted.
    """
    bank = init_bank(samples, cfg) if initial_bank is None else initial_bank
    X = _stack_patches(samples)
    targets = np.array([s.target_cost for s in samples])
    test_X = _stack_patches(test_samples)
    test_targets = np.array([s.target_cost for s in test_samples])
    guard = PROTECTION_SCALE * cfg.f_max
    cur_err = _envelope_error(bank, X, targets)
    train_errors = [cur_err]
    test_errors = [_envelope_error(bank, test_X, test_targets)]
    prev_assign = None
    for _ in range(cfg.max_iterations):
        assign = np.argmin(_cost_matrix(bank, X), axis=1)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        patterns = list(bank.patterns)
        for j in range(N_SPECIAL, len(patterns)):
            mask = assign == j
            if not mask.any():
                continue
            candidate = refit_pattern(X[mask], targets[mask], bank.side,
                                      guard)
            trial = replace(
                bank,
                patterns=tuple(patterns[:j]) + (candidate,)
                + tuple(patterns[j + 1:]),
            )
            trial_err = _envelope_error(trial, X, targets)
            if trial_err <= cur_err:
                patterns[j] = candidate
                bank = trial
                cur_err = trial_err
        train_errors.append(cur_err)
        test_errors.append(_envelope_error(bank, test_X, test_targets))
        prev_assign = assign
    return bank, ErrorTrace(tuple(train_errors), tuple(test_errors))


def signed_relative_errors(bank: PatternBank, shapes) -> np.ndarray:
    """Per-shape (model total - true total) / true perimeter.

    The model total sums envelope costs over boundary windows only; with
    the special patterns present the interior and exterior windows cost
    exactly zero anyway, so this matches the full-grid sum for any bank
    that includes them.
    """
    out = np.empty(len(shapes))
    for i, s in enumerate(shapes):
        model = boundary_model_cost(bank, s.labeling)
        out[i] = (model - s.true_cost) / s.true_length
    return out


def constants_refit_program(counts, fixed_totals, true_totals,
                            lower_bounds) -> LinearProgram:
    """Joint L1 program over the regular-pattern constants.

    ``counts[i, j]`` is how many windows of image i currently use regular
    pattern j; each image's modeled total is then
    ``fixed_totals[i] + counts[i] . c``.  Variables are the constants
    followed by one residual per image.
    """
    counts = np.asarray(counts, dtype=float)
    fixed = np.asarray(fixed_totals, dtype=float)
    t = np.asarray(true_totals, dtype=float)
    lb = np.asarray(lower_bounds, dtype=float)
    n_img, n_pat = counts.shape
    if fixed.shape != (n_img,) or t.shape != (n_img,):
        raise ValueError("totals must have one entry per image")
    if lb.shape != (n_pat,):
        raise ValueError("lower_bounds must have one entry per pattern")
    n_vars = n_pat + n_img
    objective = np.zeros(n_vars)
    objective[n_pat:] = 1.0
    constraints = []
    for i in range(n_img):
        row = np.zeros(n_vars)
        row[:n_pat] = counts[i]
        row[n_pat + i] = -1.0
        constraints.append((row, LE, float(t[i] - fixed[i])))
        row2 = np.zeros(n_vars)
        row2[:n_pat] = counts[i]
        row2[n_pat + i] = 1.0
        constraints.append((row2, GE, float(t[i] - fixed[i])))
    lower = np.concatenate([lb, np.zeros(n_img)])
    return LinearProgram(objective=objective, constraints=constraints,
                         lower=lower)


def _weights_refit_program(features, counts, special_fixed, true_totals,
                           side: int):
    """Joint L1 program over regular-pattern weights and constants.

    ``features[i, j]`` aggregates the labelings of image i's windows that
    use pattern j (summed patches), so the modeled total is linear in the
    unknowns.  The admissible set is encoded with one auxiliary variable
    per weight entry.  Returns the program plus slices for decoding.
    """
    d = side * side
    n_img, n_pat = counts.shape
    w_at = lambda j, v: j * d + v
    c_at = lambda j: n_pat * d + j
    aux_at = lambda j, v: n_pat * (d + 1) + j * d + v
    r_at = lambda i: n_pat * (2 * d + 1) + i
    n_vars = n_pat * (2 * d + 1) + n_img
    objective = np.zeros(n_vars)
    objective[n_pat * (2 * d + 1):] = 1.0
    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    lower[n_pat * (2 * d + 1):] = 0.0
    upper[n_pat * (d + 1): n_pat * (2 * d + 1)] = 0.0
    constraints = []
    for i in range(n_img):
        row = np.zeros(n_vars)
        for j in range(n_pat):
            row[j * d:(j + 1) * d] = features[i, j]
            row[c_at(j)] = counts[i, j]
        rhs = float(true_totals[i] - special_fixed[i])
        up = row.copy()
        up[r_at(i)] = -1.0
        constraints.append((up, LE, rhs))
        dn = row.copy()
        dn[r_at(i)] = 1.0
        constraints.append((dn, GE, rhs))
    for j in range(n_pat):
        for v in range(d):
            row = np.zeros(n_vars)
            row[aux_at(j, v)] = 1.0
            row[w_at(j, v)] = -1.0
            constraints.append((row, LE, 0.0))
        row = np.zeros(n_vars)
        row[n_pat * (d + 1) + j * d: n_pat * (d + 1) + (j + 1) * d] = 1.0
        row[c_at(j)] = 1.0
        constraints.append((row, GE, 0.0))
    program = LinearProgram(objective=objective, constraints=constraints,
                            lower=lower, upper=upper)
    return program, w_at, c_at


def total_absolute_error(bank: PatternBank, labelings, true_totals) -> float:
    """Sum over images of |modeled total - true total|."""
    return float(sum(
        abs(higher_order_total(bank, x) - float(t))
        for x, t in zip(labelings, true_totals)
    ))


def train_alg2(labelings, true_totals, bank: PatternBank,
               refit_weights: bool = False, max_iterations: int = 20):
    """Recalibrate the bank so summed window costs match whole-shape totals.

    Alternates (1) per-window nearest-pattern assignment on every image with
    (2) one joint L1 program over the regular-pattern constants (and, when
    ``refit_weights`` is set, the weights as well, with the admissible-set
    reformulation).  Special patterns stay fixed.  Returns the refitted bank
    and the per-iteration objective trace, entry 0 being the input bank.
    """
    true_totals = np.asarray(true_totals, dtype=float)
    if len(labelings) != true_totals.size:
        raise ValueError("need one true total per labeling")
    n_pat = len(bank.patterns) - N_SPECIAL
    if n_pat < 1:
        raise ValueError("bank has no regular patterns to refit")
    d = bank.side * bank.side
    patch_sets = [patch_matrix(x, bank.side) for x in labelings]
    trace = [total_absolute_error(bank, labelings, true_totals)]
    prev_assign = None
    for _ in range(max_iterations):
        if trace[-1] < 1e-9:
            break
        assigns = [
            np.argmin(_cost_matrix(bank, P), axis=1) for P in patch_sets
        ]
        if prev_assign is not None and all(
            np.array_equal(a, b) for a, b in zip(assigns, prev_assign)
        ):
            break
        n_img = len(labelings)
        counts = np.zeros((n_img, n_pat))
        if refit_weights:
            features = np.zeros((n_img, n_pat, d))
            special_fixed = np.zeros(n_img)
            for i, (P, a) in enumerate(zip(patch_sets, assigns)):
                for j in range(n_pat):
                    mask = a == N_SPECIAL + j
                    counts[i, j] = mask.sum()
                    if mask.any():
                        features[i, j] = P[mask].sum(axis=0)
                for s in range(N_SPECIAL):
                    mask = a == s
                    if mask.any():
                        pat = bank.patterns[s]
                        special_fixed[i] += (
                            P[mask] @ pat.weights + pat.constant
                        ).sum()
            program, w_at, c_at = _weights_refit_program(
                features, counts, special_fixed, true_totals, bank.side
            )
            sol = solve(program)
            if sol.status != "optimal":
                raise LpError(f"refit LP ended with status {sol.status!r}")
            patterns = list(bank.patterns)
            for j in range(n_pat):
                w = sol.values[w_at(j, 0): w_at(j, 0) + d]
                c = float(sol.values[c_at(j)])
                floor = -float(np.minimum(w, 0.0).sum())
                patterns[N_SPECIAL + j] = Pattern(bank.side, w, max(c, floor))
        else:
            fixed = np.zeros(n_img)
            for i, (P, a) in enumerate(zip(patch_sets, assigns)):
                for j in range(n_pat):
                    counts[i, j] = (a == N_SPECIAL + j).sum()
                weight_part = (
                    (P * bank.weight_matrix[a]).sum()
                )
                special_c = sum(
                    bank.patterns[s].constant * (a == s).sum()
                    for s in range(N_SPECIAL)
                )
                fixed[i] = weight_part + special_c
            lb = np.array([
                -float(np.minimum(p.weights, 0.0).sum())
                for p in bank.patterns[N_SPECIAL:]
            ])
            sol = solve(constants_refit_program(counts, fixed, true_totals, lb))
            if sol.status != "optimal":
                raise LpError(f"refit LP ended with status {sol.status!r}")
            patterns = list(bank.patterns)
            for j in range(n_pat):
                pat = patterns[N_SPECIAL + j]
                c = max(float(sol.values[j]), float(lb[j]))
                patterns[N_SPECIAL + j] = Pattern(bank.side, pat.weights, c)
        bank = replace(bank, patterns=tuple(patterns))
        trace.append(total_absolute_error(bank, labelings, true_totals))
        prev_assign = assigns
    return bank, tuple(trace)
