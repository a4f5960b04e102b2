"""Core model types: binary labelings, soft-pattern banks, windows, energies.

A "soft pattern" is an affine function ``<weights, patch> + constant`` of the
K*K binary values in a square window.  A pattern bank holds many such
patterns; the cost the bank assigns to a window is the lower envelope
(pointwise minimum) over its members.  Banks carry a cutoff pattern (zero
weights, constant ``f_max``) that caps the envelope, and usually two special
patterns that drive the envelope to exactly zero whenever the four center
pixels of the window are uniformly foreground or uniformly background.  The
total energy of a labeling couples per-pixel unary terms, optional pairwise
grid terms, and one envelope term per window position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Sentinel magnitude for hard constraints.  Kept finite so ordinary float
# arithmetic (message passing, rounding) continues to work.
BIG = 1e9

# Envelope members may dip below zero by at most this much (LP feasibility
# slack from the fitting stage).
NONNEG_TOL = 1e-8


def softmin(values, beta: float) -> float:
    """Smooth minimum ``-(1/beta) * log(sum(exp(-beta * v)))``.

    Converges to ``min(values)`` as ``beta`` grows; computed with a max-shift
    so large ``beta`` does not overflow.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmin of an empty sequence")
    if not np.isfinite(beta) or beta <= 0:
        raise ValueError(f"beta must be positive and finite, got {beta}")
    lo = v.min()
    return float(lo - np.log(np.exp(-beta * (v - lo)).sum()) / beta)


def center_offset(side: int) -> int:
    """Offset of the top-left pixel of the 2x2 center block inside a window."""
    if side < 2:
        raise ValueError(f"window side must be >= 2, got {side}")
    return side // 2 - 1


@dataclass(frozen=True)
class BinaryLabeling:
    """A height x width array of {0, 1} labels, immutable after construction."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"labels must be a 2-d array, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        """(width, height)."""
        return (self.width, self.height)

    def patch(self, anchor: tuple[int, int], side: int) -> np.ndarray:
        """Row-major flat copy of the ``side x side`` window anchored at
        ``anchor = (x, y)`` (top-left corner)."""
        x, y = anchor
        if not (0 <= x <= self.width - side and 0 <= y <= self.height - side):
            raise ValueError(f"window {anchor} side {side} exceeds {self.dims}")
        return self.labels[y : y + side, x : x + side].reshape(-1).copy()


def window_locations(dims: tuple[int, int], side: int) -> list[tuple[int, int]]:
    """Anchors (top-left corners) of every side x side window fully inside a
    width x height grid, in row-major order."""
    w, h = dims
    if side < 1:
        raise ValueError(f"window side must be >= 1, got {side}")
    if side > w or side > h:
        raise ValueError(f"window side {side} exceeds grid dims {dims}")
    return [(x, y) for y in range(h - side + 1) for x in range(w - side + 1)]


def is_boundary_location(x: BinaryLabeling, anchor: tuple[int, int], side: int) -> bool:
    """True iff the 2x2 center block of the window at ``anchor`` contains both
    labels."""
    o = center_offset(side)
    ax, ay = anchor
    if not (0 <= ax <= x.width - side and 0 <= ay <= x.height - side):
        raise ValueError(f"anchor {anchor} invalid for side {side} on {x.dims}")
    block = x.labels[ay + o : ay + o + 2, ax + o : ax + o + 2]
    return bool(block.min() != block.max())


def affine_cost(weights, constant: float, patch) -> float:
    """``<weights, patch> + constant`` for a flat binary patch."""
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(patch, dtype=np.float64)
    if w.shape != p.shape:
        raise ValueError(f"patch length {p.shape} does not match weights {w.shape}")
    return float(w @ p + constant)


@dataclass(frozen=True)
class Pattern:
    """One affine window-cost function: ``side*side`` weights plus a constant."""

    side: int
    weights: np.ndarray
    constant: float

    def __post_init__(self):
        if self.side < 1:
            raise ValueError(f"pattern side must be >= 1, got {self.side}")
        w = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        if w.size != self.side * self.side:
            raise ValueError(
                f"expected {self.side * self.side} weights, got {w.size}"
            )
        if not np.isfinite(w).all() or not np.isfinite(self.constant):
            raise ValueError("pattern weights and constant must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "constant", float(self.constant))

    def min_over_patches(self) -> float:
        """Minimum of the pattern cost over all binary patches:
        ``sum(min(w, 0)) + constant``."""
        return float(np.minimum(self.weights, 0.0).sum() + self.constant)


def pattern_cost(pattern: Pattern, patch) -> float:
    """Cost the pattern assigns to one flat row-major binary patch."""
    return affine_cost(pattern.weights, pattern.constant, patch)


def make_special_patterns(
    side: int, f_max: float, big: float | None = None
) -> tuple[Pattern, Pattern, Pattern]:
    """The three reserved patterns: cutoff, all-foreground, all-background.

    The cutoff pattern caps the envelope at ``f_max``.  The fg pattern costs
    zero exactly when the 2x2 center is uniformly foreground, the bg pattern
    when it is uniformly background; any deviating center pixel costs ``big``
    which by default is ``10 * f_max``, enough to push a single-pixel
    deviation above the cutoff.
    """
    if f_max <= 0:
        raise ValueError(f"f_max must be positive, got {f_max}")
    if big is None:
        big = 10.0 * f_max
    if big <= 0:
        raise ValueError(f"big must be positive, got {big}")
    n = side * side
    cutoff = Pattern(side, np.zeros(n), f_max)
    o = center_offset(side)
    center = np.zeros((side, side), dtype=bool)
    center[o : o + 2, o : o + 2] = True
    fg_w = np.where(center, -big, 0.0).reshape(-1)
    bg_w = np.where(center, +big, 0.0).reshape(-1)
    fg = Pattern(side, fg_w, 4.0 * big)
    bg = Pattern(side, bg_w, 0.0)
    return cutoff, fg, bg


@dataclass(frozen=True)
class PatternBank:
    """An ordered collection of patterns sharing one window side.

    ``cutoff_index`` is mandatory; ``fg_index`` / ``bg_index`` point at the
    two center-block special patterns when present.  Every member must satisfy
    ``sum(min(w, 0)) + constant >= 0`` (up to LP slack) so the envelope never
    goes negative.
    """

    side: int
    f_max: float
    patterns: tuple[Pattern, ...]
    cutoff_index: int
    fg_index: int | None = None
    bg_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        if not self.patterns:
            raise ValueError("pattern bank must contain at least one pattern")
        if self.f_max <= 0:
            raise ValueError(f"f_max must be positive, got {self.f_max}")
        for p in self.patterns:
            if p.side != self.side:
                raise ValueError(
                    f"pattern side {p.side} does not match bank side {self.side}"
                )
            if p.min_over_patches() < -NONNEG_TOL:
                raise ValueError(
                    "pattern envelope member can go negative: "
                    f"sum(min(w,0)) + c = {p.min_over_patches():.3e}"
                )
        n = len(self.patterns)
        if not (0 <= self.cutoff_index < n):
            raise ValueError(f"cutoff_index {self.cutoff_index} out of range")
        cut = self.patterns[self.cutoff_index]
        if cut.weights.any() or cut.constant != self.f_max:
            raise ValueError("cutoff pattern must have zero weights and constant f_max")
        o = center_offset(self.side)
        center = np.zeros((self.side, self.side), dtype=bool)
        center[o : o + 2, o : o + 2] = True
        flat_center = center.reshape(-1)
        for idx, matching in ((self.fg_index, 1.0), (self.bg_index, 0.0)):
            if idx is None:
                continue
            if not (0 <= idx < n):
                raise ValueError(f"special pattern index {idx} out of range")
            p = self.patterns[idx]
            if p.weights[~flat_center].any():
                raise ValueError("special pattern weights must vanish off-center")
            match_cost = p.weights[flat_center].sum() * matching + p.constant
            if match_cost != 0.0:
                raise ValueError(
                    f"special pattern must cost 0 on its matching center, got {match_cost}"
                )

    def __len__(self) -> int:
        return len(self.patterns)

    @cached_property
    def weight_matrix(self) -> np.ndarray:
        """(n_patterns, side*side) stack of pattern weights."""
        m = np.stack([p.weights for p in self.patterns])
        m.flags.writeable = False
        return m

    @cached_property
    def constants(self) -> np.ndarray:
        c = np.array([p.constant for p in self.patterns])
        c.flags.writeable = False
        return c

    def to_json(self) -> str:
        doc = {
            "side": self.side,
            "f_max": self.f_max,
            "cutoff_index": self.cutoff_index,
            "fg_index": self.fg_index,
            "bg_index": self.bg_index,
            "patterns": [
                {"weights": p.weights.tolist(), "constant": p.constant}
                for p in self.patterns
            ],
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PatternBank":
        doc = json.loads(text)
        side = int(doc["side"])
        patterns = tuple(
            Pattern(side, np.asarray(p["weights"], dtype=np.float64), float(p["constant"]))
            for p in doc["patterns"]
        )
        return cls(
            side=side,
            f_max=float(doc["f_max"]),
            patterns=patterns,
            cutoff_index=int(doc["cutoff_index"]),
            fg_index=None if doc.get("fg_index") is None else int(doc["fg_index"]),
            bg_index=None if doc.get("bg_index") is None else int(doc["bg_index"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "PatternBank":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_json(fh.read())


def bank_with_specials(
    regular: list[Pattern] | tuple[Pattern, ...],
    side: int,
    f_max: float,
    big: float | None = None,
) -> PatternBank:
    """Assemble a bank [cutoff, fg, bg, *regular]."""
    cutoff, fg, bg = make_special_patterns(side, f_max, big)
    return PatternBank(
        side=side,
        f_max=f_max,
        patterns=(cutoff, fg, bg) + tuple(regular),
        cutoff_index=0,
        fg_index=1,
        bg_index=2,
    )


def cutoff_only_bank(side: int, f_max: float) -> PatternBank:
    cutoff, _, _ = make_special_patterns(side, f_max)
    return PatternBank(
        side=side, f_max=f_max, patterns=(cutoff,), cutoff_index=0
    )


def higher_order_cost(bank: PatternBank, patch) -> tuple[float, int]:
    """Envelope cost of one window patch: (min pattern cost, argmin index).

    Ties resolve to the lowest pattern index.
    """
    p = np.asarray(patch, dtype=np.float64).reshape(-1)
    if p.size != bank.side * bank.side:
        raise ValueError(
            f"patch has {p.size} entries, bank side {bank.side} needs {bank.side ** 2}"
        )
    costs = bank.weight_matrix @ p + bank.constants
    idx = int(np.argmin(costs))
    return float(costs[idx]), idx


def convert_hard_pattern(template, cost: float, big: float) -> Pattern:
    """Turn a rigid binary template into an equivalent soft pattern.

    The returned pattern costs exactly ``cost`` on the template itself and at
    least ``cost + big`` on any patch deviating in one or more pixels:
    weights are ``-big`` where the template is 1 and ``+big`` where it is 0,
    with constant ``cost + big * (number of ones)``.
    """
    t = np.asarray(template)
    flat = t.reshape(-1)
    if not np.isin(flat, (0, 1)).all():
        raise ValueError("template must be binary")
    side = int(round(np.sqrt(flat.size)))
    if side * side != flat.size:
        raise ValueError(f"template length {flat.size} is not a perfect square")
    if big <= 0:
        raise ValueError(f"big must be positive, got {big}")
    if cost < 0:
        raise ValueError(f"cost must be non-negative, got {cost}")
    w = np.where(flat == 1, -big, big).astype(np.float64)
    c = float(cost + big * flat.sum())
    return Pattern(side, w, c)


def patch_matrix(labeling: BinaryLabeling, side: int) -> np.ndarray:
    """(n_windows, side*side) float matrix of all window patches, rows ordered
    like ``window_locations``."""
    win = np.lib.stride_tricks.sliding_window_view(labeling.labels, (side, side))
    n = win.shape[0] * win.shape[1]
    return win.reshape(n, side * side).astype(np.float64)


def boundary_anchor_mask(labeling: BinaryLabeling, side: int) -> np.ndarray:
    """Boolean mask over window anchors: True where the 2x2 center is mixed."""
    blocks = np.lib.stride_tricks.sliding_window_view(labeling.labels, (2, 2))
    mixed = blocks.max(axis=(2, 3)) != blocks.min(axis=(2, 3))
    o = center_offset(side)
    h = labeling.height - side + 1
    w = labeling.width - side + 1
    return mixed[o : o + h, o : o + w].reshape(-1).copy()


def envelope_costs(bank: PatternBank, labeling: BinaryLabeling) -> np.ndarray:
    """Envelope cost per window anchor (row-major)."""
    pm = patch_matrix(labeling, bank.side)
    return (pm @ bank.weight_matrix.T + bank.constants).min(axis=1)


def higher_order_total(bank: PatternBank, labeling: BinaryLabeling) -> float:
    """Sum of envelope costs over every window position."""
    return float(envelope_costs(bank, labeling).sum())


def boundary_model_cost(bank: PatternBank, labeling: BinaryLabeling) -> float:
    """Sum of envelope costs restricted to boundary window positions."""
    costs = envelope_costs(bank, labeling)
    mask = boundary_anchor_mask(labeling, bank.side)
    return float(costs[mask].sum())


@dataclass(frozen=True)
class GridEdge:
    """A pairwise term between two pixels, with a full 2x2 cost table."""

    u: tuple[int, int]
    v: tuple[int, int]
    table: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.table, dtype=np.float64)
        if t.shape != (2, 2):
            raise ValueError(f"edge table must be 2x2, got {t.shape}")
        t.flags.writeable = False
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "u", (int(self.u[0]), int(self.u[1])))
        object.__setattr__(self, "v", (int(self.v[0]), int(self.v[1])))


def length_prior_edges(
    dims: tuple[int, int], weight: float
) -> tuple[GridEdge, ...]:
    """8-connected Potts edges approximating a boundary-length penalty.

    Axis edges cost ``weight``; diagonal edges ``weight / sqrt(2)`` so the
    penalty tracks Euclidean length up to the usual metrication error.
    """
    w, h = dims
    if weight < 0:
        raise ValueError(f"length weight must be >= 0, got {weight}")
    axis = np.array([[0.0, weight], [weight, 0.0]])
    diag = axis / np.sqrt(2.0)
    edges = []
    for y in range(h):
        for x in range(w):
            if x + 1 < w:
                edges.append(GridEdge((x, y), (x + 1, y), axis))
            if y + 1 < h:
                edges.append(GridEdge((x, y), (x, y + 1), axis))
            if x + 1 < w and y + 1 < h:
                edges.append(GridEdge((x, y), (x + 1, y + 1), diag))
            if x - 1 >= 0 and y + 1 < h:
                edges.append(GridEdge((x, y), (x - 1, y + 1), diag))
    return tuple(edges)


@dataclass(frozen=True)
class EnergyModel:
    """Unary + optional pairwise + per-window envelope energy on a grid.

    ``unaries`` has shape (height, width, 2); ``locations`` is derived and
    lists every window anchor fully inside the grid.
    """

    unaries: np.ndarray
    bank: PatternBank
    pairwise: tuple[GridEdge, ...] = ()
    locations: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        u = np.ascontiguousarray(self.unaries, dtype=np.float64)
        if u.ndim != 3 or u.shape[2] != 2:
            raise ValueError(f"unaries must have shape (h, w, 2), got {u.shape}")
        if not np.isfinite(u).all():
            raise ValueError("unaries must be finite (use BIG for hard constraints)")
        u.flags.writeable = False
        object.__setattr__(self, "unaries", u)
        object.__setattr__(self, "pairwise", tuple(self.pairwise))
        h, w = u.shape[:2]
        if self.bank.side > min(w, h):
            raise ValueError(
                f"bank side {self.bank.side} exceeds grid dims {(w, h)}"
            )
        for e in self.pairwise:
            for (x, y) in (e.u, e.v):
                if not (0 <= x < w and 0 <= y < h):
                    raise ValueError(f"edge endpoint {(x, y)} outside grid {(w, h)}")
            if e.u == e.v:
                raise ValueError("edge endpoints must differ")
        object.__setattr__(
            self, "locations", tuple(window_locations((w, h), self.bank.side))
        )

    @property
    def dims(self) -> tuple[int, int]:
        return (self.unaries.shape[1], self.unaries.shape[0])


def total_energy(model: EnergyModel, x: BinaryLabeling) -> float:
    """Unary + pairwise + envelope energy of a labeling."""
    if x.dims != model.dims:
        raise ValueError(f"labeling dims {x.dims} do not match model {model.dims}")
    lab = x.labels
    idx = lab.astype(np.intp)[..., None]
    unary = np.take_along_axis(model.unaries, idx, axis=2).sum()
    pair = 0.0
    for e in model.pairwise:
        pair += e.table[lab[e.u[1], e.u[0]], lab[e.v[1], e.v[0]]]
    return float(unary + pair + higher_order_total(model.bank, x))
