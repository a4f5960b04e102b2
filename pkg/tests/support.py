"""Shared helpers for the test suite: small random model builders and naive
reference implementations used as oracles."""

from __future__ import annotations

import numpy as np

from curvemrf.core import (
    BinaryLabeling,
    EnergyModel,
    GridEdge,
    Pattern,
    PatternBank,
    bank_with_specials,
    pattern_cost,
    window_locations,
)


def random_bank(rng, side, n_regular, f_max=2.0, weight_scale=1.0):
    """A valid bank with specials plus ``n_regular`` random patterns.

    Random constants are lifted so every member satisfies the envelope
    non-negativity requirement exactly.
    """
    regular = []
    for _ in range(n_regular):
        w = rng.normal(0.0, weight_scale, side * side)
        c = -np.minimum(w, 0.0).sum() + rng.uniform(0.0, f_max)
        regular.append(Pattern(side, w, c))
    return bank_with_specials(regular, side, f_max)


def random_model(rng, dims, bank, unary_scale=1.0, n_grid_edges=0):
    """Random EnergyModel on ``dims = (w, h)`` with optional random pairwise
    grid edges between 4-neighbors."""
    w, h = dims
    unaries = rng.normal(0.0, unary_scale, (h, w, 2))
    edges = []
    if n_grid_edges:
        candidates = []
        for y in range(h):
            for x in range(w):
                if x + 1 < w:
                    candidates.append(((x, y), (x + 1, y)))
                if y + 1 < h:
                    candidates.append(((x, y), (x, y + 1)))
        take = rng.choice(len(candidates), size=min(n_grid_edges, len(candidates)),
                          replace=False)
        for i in sorted(take):
            u, v = candidates[i]
            edges.append(GridEdge(u, v, rng.normal(0.0, unary_scale, (2, 2))))
    return EnergyModel(unaries=unaries, bank=bank, pairwise=tuple(edges))


def naive_total_energy(model: EnergyModel, x: BinaryLabeling) -> float:
    """Plain-loop energy evaluation, independent of the vectorized path."""
    total = 0.0
    for y in range(x.height):
        for xx in range(x.width):
            total += model.unaries[y, xx, x.labels[y, xx]]
    for e in model.pairwise:
        total += e.table[x.labels[e.u[1], e.u[0]], x.labels[e.v[1], e.v[0]]]
    side = model.bank.side
    for anchor in window_locations(x.dims, side):
        patch = x.patch(anchor, side)
        total += min(pattern_cost(p, patch) for p in model.bank.patterns)
    return total


def enumerate_labelings(width, height):
    """All 2^(w*h) labelings of a tiny grid as an iterator of BinaryLabeling."""
    n = width * height
    for bits in range(1 << n):
        flat = np.array([(bits >> i) & 1 for i in range(n)], dtype=np.uint8)
        yield BinaryLabeling(flat.reshape(height, width))


def exhaustive_minimum(model: EnergyModel):
    """Brute-force global minimum of the total energy on a tiny grid.

    Vectorized over all labelings: per-window envelope values come from a
    512-entry (or smaller) lookup table per window.
    """
    w, h = model.dims
    n = w * h
    if n > 20:
        raise ValueError("exhaustive oracle limited to <= 20 pixels")
    count = 1 << n
    bits = (np.arange(count)[:, None] >> np.arange(n)[None, :]) & 1  # (count, n)
    unary_flat = model.unaries.reshape(n, 2)
    energies = np.where(bits == 1, unary_flat[:, 1], unary_flat[:, 0]).sum(axis=1)
    for e in model.pairwise:
        iu = e.u[1] * w + e.u[0]
        iv = e.v[1] * w + e.v[0]
        energies += e.table[bits[:, iu], bits[:, iv]]
    side = model.bank.side
    bank = model.bank
    wm, cv = bank.weight_matrix, bank.constants
    k2 = side * side
    patch_bits = (np.arange(1 << k2)[:, None] >> np.arange(k2)[None, :]) & 1
    env_table = (patch_bits @ wm.T + cv).min(axis=1)  # (2^k2,)
    for (ax, ay) in window_locations((w, h), side):
        slots = np.array(
            [(ay + dy) * w + (ax + dx) for dy in range(side) for dx in range(side)]
        )
        codes = (bits[:, slots] << np.arange(k2)[None, :]).sum(axis=1)
        energies += env_table[codes]
    best = int(np.argmin(energies))
    labels = bits[best].astype(np.uint8).reshape(h, w)
    return float(energies[best]), BinaryLabeling(labels)


def assert_monotone_nonincreasing(seq, tol=1e-6):
    arr = np.asarray(seq, dtype=np.float64)
    diffs = np.diff(arr)
    assert (diffs <= tol).all(), f"sequence increased: max step {diffs.max():.3e}"


def assert_monotone_nondecreasing(seq, tol=1e-9):
    arr = np.asarray(seq, dtype=np.float64)
    diffs = np.diff(arr)
    assert (diffs >= -tol).all(), f"sequence decreased: min step {diffs.min():.3e}"
