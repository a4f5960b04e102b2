"""MAP inference on the pairwise reformulation of the window-envelope energy.

Every window gets a switching variable ranging over the pattern bank, linked
to each of its pixels by a pairwise term ``w[y, offset] * x``; the envelope
energy of a labeling equals the minimum of the pairwise energy over the
switching variables.  Inference runs sequential tree-reweighted message
passing (TRW-S) over this bipartite graph (plus any pixel-to-pixel grid
edges), with a memory layout that never stores pixel-to-window messages:
they are recomputed on demand from the reparametrized pixel unaries, so the
state is O(n_windows * (K^2 + n_patterns)) instead of
O(n_windows * K^2 * n_patterns).

Also provided: a min-sum belief-propagation variant (all chain weights set
to 1), min-marginal rounding, an exhaustive small-block local search, and a
restricted local-polytope linear program over the labels that survive a
min-marginal threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BinaryLabeling, EnergyModel, GridEdge
from .lp import EQ, LinearProgram

DEFAULT_BLOCK = 6
PLATEAU_WINDOW = 10
PLATEAU_TOL = 1e-9
ICM_MIN_GAIN = 1e-12


class InferenceError(RuntimeError):
    """Raised when an inference routine is configured inconsistently."""


class InfeasibleRestrictionError(InferenceError):
    """Raised when min-marginal pruning leaves a variable with no labels."""


@dataclass(frozen=True)
class PairwiseModel:
    """Bipartite pixel/window model with optional grid edges.

    ``unaries`` has shape (height, width, 2); ``weights`` holds one row of
    K^2 link coefficients per pattern and ``constants`` the per-pattern
    offsets; ``anchors`` lists window top-left corners as (x, y).
    """

    unaries: np.ndarray
    weights: np.ndarray
    constants: np.ndarray
    side: int
    anchors: tuple
    edges: tuple = ()

    height: int = field(init=False)
    width: int = field(init=False)
    n_pixels: int = field(init=False)
    n_windows: int = field(init=False)
    n_patterns: int = field(init=False)
    pixel_unaries: np.ndarray = field(init=False)
    pix_index: np.ndarray = field(init=False)

    def __post_init__(self):
        u = np.ascontiguousarray(self.unaries, dtype=np.float64)
        if u.ndim != 3 or u.shape[2] != 2:
            raise ValueError(f"unaries must be (h, w, 2), got {u.shape}")
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        c = np.ascontiguousarray(self.constants, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != self.side * self.side:
            raise ValueError(
                f"weights must be (n_patterns, {self.side ** 2}), got {w.shape}"
            )
        if c.shape != (w.shape[0],):
            raise ValueError("constants must have one entry per pattern")
        object.__setattr__(self, "unaries", u)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "constants", c)
        object.__setattr__(self, "anchors", tuple(self.anchors))
        object.__setattr__(self, "edges", tuple(self.edges))
        h, wid = u.shape[:2]
        object.__setattr__(self, "height", h)
        object.__setattr__(self, "width", wid)
        object.__setattr__(self, "n_pixels", h * wid)
        object.__setattr__(self, "n_windows", len(self.anchors))
        object.__setattr__(self, "n_patterns", w.shape[0])
        object.__setattr__(self, "pixel_unaries", u.reshape(-1, 2))
        k = self.side
        pix = np.empty((len(self.anchors), k * k), dtype=np.intp)
        for i, (ax, ay) in enumerate(self.anchors):
            if not (0 <= ax <= wid - k and 0 <= ay <= h - k):
                raise ValueError(f"window anchor {(ax, ay)} does not fit")
            rows = np.arange(ay, ay + k)
            cols = np.arange(ax, ax + k)
            pix[i] = (rows[:, None] * wid + cols[None, :]).ravel()
        pix.flags.writeable = False
        object.__setattr__(self, "pix_index", pix)
        for e in self.edges:
            if not isinstance(e, GridEdge):
                raise ValueError("edges must be GridEdge instances")

    def flat(self, xy: tuple[int, int]) -> int:
        return xy[1] * self.width + xy[0]

    def assignment_energy(self, labels, pattern_choice) -> float:
        """Exact energy of a full (pixel labels, window patterns) assignment."""
        lab = np.asarray(labels, dtype=np.intp).reshape(-1)
        y = np.asarray(pattern_choice, dtype=np.intp).reshape(-1)
        if lab.size != self.n_pixels or y.size != self.n_windows:
            raise ValueError("assignment sizes do not match the model")
        total = float(self.pixel_unaries[np.arange(self.n_pixels), lab].sum())
        for e in self.edges:
            total += float(e.table[lab[self.flat(e.u)], lab[self.flat(e.v)]])
        if self.n_windows:
            patches = lab[self.pix_index].astype(np.float64)
            total += float(
                ((patches * self.weights[y]).sum(axis=1) + self.constants[y]).sum()
            )
        return total


def build_pairwise_model(model: EnergyModel) -> PairwiseModel:
    """Recast an envelope-energy model as the bipartite pairwise model."""
    return PairwiseModel(
        unaries=model.unaries,
        weights=model.bank.weight_matrix,
        constants=model.bank.constants,
        side=model.bank.side,
        anchors=model.locations,
        edges=model.pairwise,
    )


@dataclass(frozen=True)
class InferenceState:
    """Message-passing state.

    ``messages`` holds the stored window-to-pixel direction only, shape
    (n_windows, K^2, 2).  ``theta_pixels`` is each pixel's reparametrized
    unary as of its most recent forward turn (the quantity pixel-to-window
    messages are rebuilt from), ``theta_windows`` the reparametrized window
    unaries, and ``lower_bound_trace`` one value per completed pass.
    """

    model: PairwiseModel
    messages: np.ndarray
    theta_pixels: np.ndarray
    theta_windows: np.ndarray
    gamma_pixels: np.ndarray
    grid_messages: np.ndarray
    lower_bound_trace: tuple
    passes: int


def reverse_message(state: InferenceState, v, h: int, y: int) -> float:
    """Pixel-to-window message entry, rebuilt on the fly.

    The stored forward-turn pixel excess and the stored window-to-pixel
    message determine it exactly, which is why the pixel-to-window direction
    never needs to be kept in memory.  ``v`` may be a flat pixel index or an
    (x, y) coordinate pair; ``h`` is a window index and ``y`` a pattern
    label.
    """
    m = state.model
    if isinstance(v, tuple):
        v = m.flat(v)
    slots = np.nonzero(m.pix_index[h] == v)[0]
    if not slots.size:
        raise ValueError(f"pixel {v} is not covered by window {h}")
    slot = int(slots[0])
    gamma = float(state.gamma_pixels[v])
    theta = state.theta_pixels[v]
    stored = state.messages[h, slot]
    link = float(m.weights[y, slot])
    return float(
        min(gamma * theta[0] - stored[0], gamma * theta[1] - stored[1] + link)
    )


@dataclass(frozen=True)
class MinMarginals:
    """Tree min-marginals: a (height, width, 2) array for pixels and an
    (n_windows, n_patterns) array for the switching variables.  Differences
    within one variable are meaningful; absolute offsets are not."""

    pixels: np.ndarray
    windows: np.ndarray


def _grid_adjacency(model: PairwiseModel):
    """Per-pixel lists of (edge index, endpoint role) for the grid edges,
    split by whether the neighbor comes earlier or later in row-major order."""
    later = [[] for _ in range(model.n_pixels)]
    earlier = [[] for _ in range(model.n_pixels)]
    tables = []
    for idx, e in enumerate(model.edges):
        fu, fv = model.flat(e.u), model.flat(e.v)
        tables.append((fu, fv, e.table))
        if fu < fv:
            later[fu].append(idx)
            earlier[fv].append(idx)
        else:
            later[fv].append(idx)
            earlier[fu].append(idx)
    return later, earlier, tables


def _pixel_gammas(model: PairwiseModel, later, earlier, rule: str) -> np.ndarray:
    if rule == "bp":
        return np.ones(model.n_pixels)
    n_later = np.zeros(model.n_pixels, dtype=np.intp)
    if model.n_windows:
        np.add.at(n_later, model.pix_index.ravel(), 1)
    for p in range(model.n_pixels):
        n_later[p] += len(later[p])
    n_earlier = np.array([len(earlier[p]) for p in range(model.n_pixels)])
    denom = np.maximum(np.maximum(n_earlier, n_later), 1)
    return 1.0 / denom


def _window_gamma(model: PairwiseModel, rule: str) -> float:
    if rule == "bp":
        return 1.0
    return 1.0 / max(model.side * model.side, 1)


class _PixelsFirstEngine:
    """Sequential message passing with all pixels ordered before all windows.

    With this ordering pixel-to-window messages are only ever needed at two
    points with identical inputs (the sending pixel's forward turn and the
    receiving window's backward turn), so they are recomputed on the fly
    from the frozen forward pixel excesses instead of being stored.
    """

    def __init__(self, model: PairwiseModel, gamma_rule: str, chunk: int = 256):
        self.model = model
        self.chunk = chunk
        self.later, self.earlier, self.tables = _grid_adjacency(model)
        self.gamma_x = _pixel_gammas(model, self.later, self.earlier, gamma_rule)
        self.gamma_y = _window_gamma(model, gamma_rule)
        k2 = model.side * model.side
        self.messages = np.zeros((model.n_windows, k2, 2))
        self.theta_windows = np.tile(
            model.constants, (model.n_windows, 1)
        ) if model.n_windows else np.zeros((0, model.n_patterns))
        self.grid_messages = np.zeros((len(model.edges), 2, 2))
        self.theta_frozen = None

    def _window_sums(self) -> np.ndarray:
        """Sum of window-to-pixel messages per pixel."""
        acc = np.zeros((self.model.n_pixels, 2))
        if self.model.n_windows:
            flat = self.model.pix_index.ravel()
            np.add.at(acc[:, 0], flat, self.messages[:, :, 0].ravel())
            np.add.at(acc[:, 1], flat, self.messages[:, :, 1].ravel())
        return acc

    def _grid_sums(self) -> np.ndarray:
        acc = np.zeros((self.model.n_pixels, 2))
        for idx, (fu, fv, _) in enumerate(self.tables):
            acc[fv] += self.grid_messages[idx, 0]
            acc[fu] += self.grid_messages[idx, 1]
        return acc

    def _pixel_excess_forward(self) -> np.ndarray:
        """theta-hat for every pixel as of its own forward turn, updating the
        pixel-to-pixel messages of forward grid edges along the way."""
        base = self.model.pixel_unaries + self._window_sums()
        if not self.tables:
            return base
        theta = base + self._grid_sums()
        for p in range(self.model.n_pixels):
            d = self.gamma_x[p] * theta[p]
            for idx in self.later[p]:
                fu, fv, table = self.tables[idx]
                to_v = fu == p
                other = fv if to_v else fu
                slot = 0 if to_v else 1
                back = self.grid_messages[idx, 1 - slot]
                t = table if to_v else table.T
                old = self.grid_messages[idx, slot].copy()
                new = np.minimum(
                    d[0] - back[0] + t[0], d[1] - back[1] + t[1]
                )
                self.grid_messages[idx, slot] = new
                theta[other] += new - old
        return theta

    def forward(self):
        theta = self._pixel_excess_forward()
        self.theta_frozen = theta
        m = self.model
        if not m.n_windows:
            return
        b = self.gamma_x[:, None] * theta
        b0 = b[m.pix_index, 0] - self.messages[:, :, 0]
        b1 = b[m.pix_index, 1] - self.messages[:, :, 1]
        wt = m.weights.T  # (K^2, n_patterns)
        for lo in range(0, m.n_windows, self.chunk):
            hi = min(lo + self.chunk, m.n_windows)
            up = np.minimum(
                b0[lo:hi, :, None], b1[lo:hi, :, None] + wt[None, :, :]
            )
            self.theta_windows[lo:hi] = m.constants + up.sum(axis=1)

    def backward(self) -> float:
        m = self.model
        bound = 0.0
        if m.n_windows:
            b = self.gamma_x[:, None] * self.theta_frozen
            b0 = b[m.pix_index, 0] - self.messages[:, :, 0]
            b1 = b[m.pix_index, 1] - self.messages[:, :, 1]
            wt = m.weights.T
            for lo in range(0, m.n_windows, self.chunk):
                hi = min(lo + self.chunk, m.n_windows)
                up = np.minimum(
                    b0[lo:hi, :, None], b1[lo:hi, :, None] + wt[None, :, :]
                )
                delta = self.theta_windows[lo:hi].min(axis=1)
                bound += float(delta.sum())
                d = self.gamma_y * (
                    self.theta_windows[lo:hi] - delta[:, None]
                )
                a = d[:, None, :] - up
                self.messages[lo:hi, :, 0] = a.min(axis=2)
                self.messages[lo:hi, :, 1] = (a + wt[None, :, :]).min(axis=2)
        theta = self.model.pixel_unaries + self._window_sums()
        if not self.tables:
            bound += float(theta.min(axis=1).sum())
            return bound
        theta = theta + self._grid_sums()
        for p in range(self.model.n_pixels - 1, -1, -1):
            delta = float(theta[p].min())
            bound += delta
            d = self.gamma_x[p] * (theta[p] - delta)
            for idx in self.earlier[p]:
                fu, fv, table = self.tables[idx]
                to_v = fu == p
                other = fv if to_v else fu
                slot = 0 if to_v else 1
                back = self.grid_messages[idx, 1 - slot]
                t = table if to_v else table.T
                old = self.grid_messages[idx, slot].copy()
                new = np.minimum(
                    d[0] - back[0] + t[0], d[1] - back[1] + t[1]
                )
                self.grid_messages[idx, slot] = new
                theta[other] += new - old
        return bound

    def min_marginals(self) -> MinMarginals:
        theta = self.model.pixel_unaries + self._window_sums()
        if self.tables:
            theta = theta + self._grid_sums()
        pixels = theta.reshape(self.model.height, self.model.width, 2)
        return MinMarginals(pixels=pixels, windows=self.theta_windows.copy())


class _FullStorageEngine:
    """Reference-style sequential message passing over an explicit node order
    with every directed message stored.  Used for the interleaved (long
    chain) ordering, where on-the-fly recomputation is not available."""

    def __init__(self, model: PairwiseModel, gamma_rule: str, ordering: str):
        self.model = model
        n_pix, n_win = model.n_pixels, model.n_windows
        if ordering == "pixels-first":
            order = list(range(n_pix)) + [n_pix + i for i in range(n_win)]
        elif ordering == "interleaved":
            anchor_at = {}
            for i, (ax, ay) in enumerate(model.anchors):
                anchor_at[ay * model.width + ax] = n_pix + i
            order = []
            for p in range(n_pix):
                order.append(p)
                if p in anchor_at:
                    order.append(anchor_at[p])
        else:
            raise InferenceError(f"unknown ordering {ordering!r}")
        self.order = order
        self.rank = rank = {node: i for i, node in enumerate(order)}
        # adjacency: per node, list of (edge id, other node, role)
        self.adj = [[] for _ in range(n_pix + n_win)]
        self.edge_specs = []
        for wi in range(n_win):
            for slot in range(model.side * model.side):
                p = int(model.pix_index[wi, slot])
                eid = len(self.edge_specs)
                self.edge_specs.append(("link", p, n_pix + wi, slot))
                self.adj[p].append((eid, n_pix + wi, "pixel"))
                self.adj[n_pix + wi].append((eid, p, "window"))
        for e in model.edges:
            fu, fv = model.flat(e.u), model.flat(e.v)
            eid = len(self.edge_specs)
            self.edge_specs.append(("grid", fu, fv, e.table))
            self.adj[fu].append((eid, fv, "grid_u"))
            self.adj[fv].append((eid, fu, "grid_v"))
        # messages[eid] is a dict holding one vector per direction
        self.msg = []
        for spec in self.edge_specs:
            if spec[0] == "link":
                self.msg.append({
                    spec[1]: np.zeros(model.n_patterns),  # pixel -> window
                    spec[2]: np.zeros(2),                 # window -> pixel
                })
            else:
                self.msg.append({spec[1]: np.zeros(2), spec[2]: np.zeros(2)})
        if gamma_rule == "bp":
            self.gamma = np.ones(n_pix + n_win)
        else:
            n_earlier = np.zeros(n_pix + n_win, dtype=np.intp)
            n_later = np.zeros(n_pix + n_win, dtype=np.intp)
            for node in range(n_pix + n_win):
                for _, other, _ in self.adj[node]:
                    if rank[other] > rank[node]:
                        n_later[node] += 1
                    else:
                        n_earlier[node] += 1
            self.gamma = 1.0 / np.maximum(
                np.maximum(n_earlier, n_later), 1
            )
        self.last_window_excess = np.zeros((n_win, model.n_patterns))

    def _pair_term(self, eid: int, sender: int):
        """theta(sender state, receiver state) table for a directed edge."""
        kind = self.edge_specs[eid][0]
        if kind == "link":
            _, p, wnode, slot = self.edge_specs[eid]
            w_col = self.model.weights[:, slot]
            if sender == p:  # rows: x in {0,1}, cols: y
                return np.vstack([np.zeros_like(w_col), w_col])
            return np.vstack([np.zeros_like(w_col), w_col]).T
        _, fu, fv, table = self.edge_specs[eid]
        return table if sender == fu else table.T

    def _excess(self, node: int) -> np.ndarray:
        m = self.model
        if node < m.n_pixels:
            theta = m.pixel_unaries[node].copy()
        else:
            theta = m.constants.copy()
        for eid, other, _ in self.adj[node]:
            theta = theta + self.msg[eid][other]
        return theta

    def _send(self, node: int, excess: np.ndarray, targets) -> None:
        for eid, other, _ in targets:
            table = self._pair_term(eid, node)
            incoming = self.msg[eid][other]
            self.msg[eid][node] = (
                excess[:, None] - incoming[:, None] + table
            ).min(axis=0)

    def run_pass(self) -> float:
        m = self.model
        rank = self.rank
        for node in self.order:
            theta = self._excess(node)
            targets = [t for t in self.adj[node] if rank[t[1]] > rank[node]]
            self._send(node, self.gamma[node] * theta, targets)
        bound = 0.0
        for node in reversed(self.order):
            theta = self._excess(node)
            if node >= m.n_pixels:
                self.last_window_excess[node - m.n_pixels] = theta
            delta = float(theta.min())
            bound += delta
            targets = [t for t in self.adj[node] if rank[t[1]] < rank[node]]
            self._send(node, self.gamma[node] * (theta - delta), targets)
        return bound

    def min_marginals(self) -> MinMarginals:
        m = self.model
        pixels = np.empty((m.n_pixels, 2))
        for p in range(m.n_pixels):
            pixels[p] = self._excess(p)
        return MinMarginals(
            pixels=pixels.reshape(m.height, m.width, 2),
            windows=self.last_window_excess.copy(),
        )

    def export_state(self, trace, passes) -> InferenceState:
        m = self.model
        k2 = m.side * m.side
        messages = np.zeros((m.n_windows, k2, 2))
        for eid, spec in enumerate(self.edge_specs):
            if spec[0] != "link":
                continue
            _, p, wnode, slot = spec
            messages[wnode - m.n_pixels, slot] = self.msg[eid][wnode]
        grid = np.zeros((len(m.edges), 2, 2))
        base = m.n_windows * k2
        for i in range(len(m.edges)):
            _, fu, fv, _ = self.edge_specs[base + i]
            grid[i, 0] = self.msg[base + i][fu]
            grid[i, 1] = self.msg[base + i][fv]
        theta_pixels = np.empty((m.n_pixels, 2))
        for p in range(m.n_pixels):
            theta_pixels[p] = self._excess(p)
        return InferenceState(
            model=m,
            messages=messages,
            theta_pixels=theta_pixels,
            theta_windows=self.last_window_excess.copy(),
            gamma_pixels=self.gamma[: m.n_pixels].copy(),
            grid_messages=grid,
            lower_bound_trace=tuple(trace),
            passes=passes,
        )


def _resolve_passes(passes) -> tuple[int, bool]:
    if passes == "auto":
        return 2000, True
    n = int(passes)
    if n < 1:
        raise InferenceError("passes must be >= 1")
    return n, False


def _plateaued(trace) -> bool:
    if len(trace) <= PLATEAU_WINDOW:
        return False
    cur, old = trace[-1], trace[-1 - PLATEAU_WINDOW]
    return abs(cur - old) < PLATEAU_TOL * max(1.0, abs(cur))


def trws_run(
    model: PairwiseModel,
    passes=100,
    gamma_rule: str = "trws",
    ordering: str = "pixels-first",
    progress=None,
) -> tuple[InferenceState, MinMarginals]:
    """Sequential TRW-S; returns the final state (with the per-pass lower
    bound trace) and the tree min-marginals.

    ``passes`` may be an integer or "auto" (stop when the bound changes by
    less than a relative 1e-9 over 10 passes, capped at 2000).  The default
    ordering places all pixels before all windows and uses the
    recompute-on-demand engine; "interleaved" alternates pixels and windows
    in raster order and falls back to full message storage.

    ``progress``, if given, is called after every pass as
    ``progress(completed_passes, current_bound)``; returning False stops
    the run early with the state computed so far.
    """
    if gamma_rule not in ("trws", "bp"):
        raise InferenceError(f"unknown gamma rule {gamma_rule!r}")
    max_passes, auto = _resolve_passes(passes)
    trace = []
    if ordering == "pixels-first":
        engine = _PixelsFirstEngine(model, gamma_rule)
        for it in range(max_passes):
            engine.forward()
            trace.append(engine.backward())
            if progress is not None and progress(len(trace), trace[-1]) is False:
                break
            if auto and _plateaued(trace):
                break
        state = InferenceState(
            model=model,
            messages=engine.messages,
            theta_pixels=engine.theta_frozen,
            theta_windows=engine.theta_windows,
            gamma_pixels=engine.gamma_x,
            grid_messages=engine.grid_messages,
            lower_bound_trace=tuple(trace),
            passes=len(trace),
        )
        return state, engine.min_marginals()
    engine = _FullStorageEngine(model, gamma_rule, ordering)
    for it in range(max_passes):
        trace.append(engine.run_pass())
        if progress is not None and progress(len(trace), trace[-1]) is False:
            break
        if auto and _plateaued(trace):
            break
    return engine.export_state(trace, len(trace)), engine.min_marginals()


def bp_run(model: PairwiseModel, passes=100,
           ordering: str = "pixels-first") -> MinMarginals:
    """Sequential min-sum belief propagation: the same sweeps with every
    chain weight set to 1.  No lower-bound trace is meaningful, so only the
    min-marginals are returned."""
    _, marginals = trws_run(model, passes, gamma_rule="bp", ordering=ordering)
    return marginals


def round_min_marginals(marginals: MinMarginals) -> BinaryLabeling:
    """Per-pixel argmin of the two min-marginals; ties resolve to 0."""
    mm = marginals.pixels
    return BinaryLabeling((mm[:, :, 1] < mm[:, :, 0]).astype(np.uint8))


def round_relaxed(values: np.ndarray) -> BinaryLabeling:
    """Threshold relaxed foreground indicators at 0.5; ties resolve to 0."""
    v = np.asarray(values, dtype=np.float64)
    return BinaryLabeling((v > 0.5).astype(np.uint8))


def _block_shapes(block_size: int):
    best = None
    for a in range(1, block_size + 1):
        if block_size % a == 0:
            b = block_size // a
            if best is None or abs(a - b) < abs(best[0] - best[1]):
                best = (a, b)
    shapes = {best, (best[1], best[0])}
    return sorted(shapes)


def _boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels adjacent (8-connectivity, radius 1) to a label change."""
    diff = np.zeros_like(labels, dtype=bool)
    diff[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    diff[:, 1:] |= labels[:, :-1] != labels[:, 1:]
    diff[:-1, :] |= labels[:-1, :] != labels[1:, :]
    diff[1:, :] |= labels[:-1, :] != labels[1:, :]
    grown = diff.copy()
    grown[:-1, :] |= diff[1:, :]
    grown[1:, :] |= diff[:-1, :]
    grown[:, :-1] |= diff[:, 1:]
    grown[:, 1:] |= diff[:, :-1]
    return grown


class _LocalEnergy:
    """Incremental energy evaluation for rectangular block moves."""

    def __init__(self, model: EnergyModel):
        self.model = model
        self.side = model.bank.side
        self.weights = model.bank.weight_matrix
        self.constants = model.bank.constants
        h, w = model.unaries.shape[:2]
        self.dims = (w, h)
        self.edges_touching = {}
        for e in model.pairwise:
            for (x, y) in (e.u, e.v):
                self.edges_touching.setdefault((x, y), []).append(e)

    def region_energy(self, labels: np.ndarray, x0, y0, bw, bh) -> float:
        """Energy terms affected by the block [x0, x0+bw) x [y0, y0+bh)."""
        w, h = self.dims
        k = self.side
        ax_lo, ax_hi = max(0, x0 - k + 1), min(w - k, x0 + bw - 1)
        ay_lo, ay_hi = max(0, y0 - k + 1), min(h - k, y0 + bh - 1)
        total = 0.0
        if ax_hi >= ax_lo and ay_hi >= ay_lo:
            sub = labels[ay_lo:ay_hi + k, ax_lo:ax_hi + k]
            win = np.lib.stride_tricks.sliding_window_view(sub, (k, k))
            pm = win.reshape(-1, k * k).astype(np.float64)
            costs = pm @ self.weights.T + self.constants
            total += float(costs.min(axis=1).sum())
        u = self.model.unaries[y0:y0 + bh, x0:x0 + bw]
        blk = labels[y0:y0 + bh, x0:x0 + bw].astype(np.intp)[..., None]
        total += float(np.take_along_axis(u, blk, axis=2).sum())
        seen = set()
        for yy in range(y0, y0 + bh):
            for xx in range(x0, x0 + bw):
                for e in self.edges_touching.get((xx, yy), ()):
                    key = id(e)
                    if key in seen:
                        continue
                    seen.add(key)
                    total += float(
                        e.table[labels[e.u[1], e.u[0]], labels[e.v[1], e.v[0]]]
                    )
        return total


def block_icm(model: EnergyModel, start: BinaryLabeling,
              block_size: int = DEFAULT_BLOCK) -> BinaryLabeling:
    """Exhaustive local search over small rectangular blocks near the
    boundary.

    Sweeps every block position whose cells touch the (dilated) boundary of
    the current labeling or a pixel whose unary alone prefers the opposite
    label, tries all 2^block_size assignments of the block, and keeps the
    best.  Stops when a full sweep accepts no move, so the energy never
    increases.
    """
    if not 1 <= block_size <= 12:
        raise InferenceError("block_size must be between 1 and 12")
    if start.dims != model.dims:
        raise ValueError("labeling dims do not match the model")
    labels = start.labels.copy()
    h, w = labels.shape
    shapes = _block_shapes(block_size)
    local = _LocalEnergy(model)
    patterns = [
        np.array(bits, dtype=np.uint8)
        for bits in np.ndindex(*([2] * block_size))
    ]
    wants_fg = model.unaries[:, :, 1] < model.unaries[:, :, 0]
    wants_bg = model.unaries[:, :, 0] < model.unaries[:, :, 1]
    improved = True
    while improved:
        improved = False
        mismatch = ((labels == 0) & wants_fg) | ((labels == 1) & wants_bg)
        hot = _boundary_mask(labels) | mismatch
        for bh, bw in shapes:
            for y0 in range(h - bh + 1):
                for x0 in range(w - bw + 1):
                    if not hot[y0:y0 + bh, x0:x0 + bw].any():
                        continue
                    current = labels[y0:y0 + bh, x0:x0 + bw].copy()
                    base = local.region_energy(labels, x0, y0, bw, bh)
                    best_gain = 0.0
                    best = None
                    for cand in patterns:
                        block = cand.reshape(bh, bw)
                        if np.array_equal(block, current):
                            continue
                        labels[y0:y0 + bh, x0:x0 + bw] = block
                        gain = base - local.region_energy(
                            labels, x0, y0, bw, bh
                        )
                        if gain > best_gain + ICM_MIN_GAIN:
                            best_gain = gain
                            best = block.copy()
                        labels[y0:y0 + bh, x0:x0 + bw] = current
                    if best is not None:
                        labels[y0:y0 + bh, x0:x0 + bw] = best
                        improved = True
    return BinaryLabeling(labels)


def _surviving(values: np.ndarray, threshold: float) -> np.ndarray:
    keep = values - values.min() <= threshold
    if not keep.any():
        raise InfeasibleRestrictionError(
            "threshold pruned every label of a variable"
        )
    return keep


def _restriction(model: PairwiseModel, marginals: MinMarginals,
                 threshold: float):
    """Surviving-label masks plus per-node freedom flags for the LP."""
    m = model
    mm_pix = marginals.pixels.reshape(-1, 2)
    keep_pix = [_surviving(mm_pix[p], threshold) for p in range(m.n_pixels)]
    keep_win = [
        _surviving(marginals.windows[h], threshold)
        for h in range(m.n_windows)
    ]
    pix_free = [bool(k.all()) for k in keep_pix]
    win_free = [int(k.sum()) >= 2 for k in keep_win]
    return keep_pix, keep_win, pix_free, win_free


def estimate_restricted_lp_size(
    model: PairwiseModel, marginals: MinMarginals, threshold: float
) -> tuple[int, int]:
    """Columns and rows the restricted program would have, without building
    any of its dense constraint rows."""
    m = model
    keep_pix, keep_win, pix_free, win_free = _restriction(
        model, marginals, threshold
    )
    cols = sum(int(k.sum()) for k in keep_pix)
    cols += sum(int(k.sum()) for k in keep_win)
    rows = m.n_pixels + m.n_windows
    for h in range(m.n_windows):
        if not win_free[h]:
            continue
        surv = int(keep_win[h].sum())
        free_slots = sum(
            1 for slot in range(m.side * m.side)
            if pix_free[int(m.pix_index[h, slot])]
        )
        cols += free_slots * 2 * surv
        rows += free_slots * (2 + surv)
    for e in m.edges:
        fu, fv = m.flat(e.u), m.flat(e.v)
        if pix_free[fu] and pix_free[fv]:
            cols += 4
            rows += 4
    return cols, rows


def build_restricted_lp(
    model: PairwiseModel, marginals: MinMarginals, threshold: float
) -> tuple[LinearProgram, dict]:
    """Local-polytope relaxation restricted to labels whose min-marginal is
    within ``threshold`` of the variable's minimum.

    Every surviving label keeps an indicator column, but product columns
    (pixel-window links, grid-edge marginals) are created only between
    nodes that are genuinely undetermined, meaning more than one label
    survived.  A product involving a determined node equals the other
    node's indicator by the marginalization constraints, so its cost folds
    onto that indicator's objective coefficient instead; determined nodes
    are pinned to 1 by their normalization row.  The program size therefore
    scales with the uncertain region, not the whole grid, and the optimum
    value is unchanged by the elimination.

    Returns the linear program plus index maps: ``pixel[(p, x)]`` and
    ``window[(h, y)]`` give the column of each surviving indicator.
    Raises InfeasibleRestrictionError if a variable loses all labels.
    """
    m = model
    keep_pix, keep_win, pix_free, win_free = _restriction(
        model, marginals, threshold
    )
    pixel_map: dict = {}
    window_map: dict = {}
    objective = []

    def new_var(cost: float) -> int:
        objective.append(cost)
        return len(objective) - 1

    for p in range(m.n_pixels):
        for x in range(2):
            if keep_pix[p][x]:
                pixel_map[(p, x)] = new_var(float(m.pixel_unaries[p, x]))
    for h in range(m.n_windows):
        for y in range(m.n_patterns):
            if keep_win[h][y]:
                window_map[(h, y)] = new_var(float(m.constants[y]))

    def det_label(keep) -> int:
        return int(np.argmax(keep))

    link_map: dict = {}
    for h in range(m.n_windows):
        surviving_y = [
            y for y in range(m.n_patterns) if keep_win[h][y]
        ]
        for slot in range(m.side * m.side):
            p = int(m.pix_index[h, slot])
            if win_free[h] and pix_free[p]:
                for x in range(2):
                    for y in surviving_y:
                        cost = float(m.weights[y, slot]) if x == 1 else 0.0
                        link_map[(h, slot, x, y)] = new_var(cost)
            elif win_free[h]:
                if det_label(keep_pix[p]) == 1:
                    for y in surviving_y:
                        objective[window_map[(h, y)]] += float(
                            m.weights[y, slot]
                        )
            elif pix_free[p]:
                ys = det_label(keep_win[h])
                objective[pixel_map[(p, 1)]] += float(m.weights[ys, slot])
            else:
                if det_label(keep_pix[p]) == 1:
                    ys = det_label(keep_win[h])
                    objective[window_map[(h, ys)]] += float(
                        m.weights[ys, slot]
                    )
    grid_map: dict = {}
    for idx, e in enumerate(m.edges):
        fu, fv = m.flat(e.u), m.flat(e.v)
        if pix_free[fu] and pix_free[fv]:
            for xu in range(2):
                for xv in range(2):
                    grid_map[(idx, xu, xv)] = new_var(float(e.table[xu, xv]))
        elif pix_free[fv]:
            xu = det_label(keep_pix[fu])
            for xv in range(2):
                objective[pixel_map[(fv, xv)]] += float(e.table[xu, xv])
        elif pix_free[fu]:
            xv = det_label(keep_pix[fv])
            for xu in range(2):
                objective[pixel_map[(fu, xu)]] += float(e.table[xu, xv])
        else:
            xu = det_label(keep_pix[fu])
            xv = det_label(keep_pix[fv])
            objective[pixel_map[(fu, xu)]] += float(e.table[xu, xv])

    n_vars = len(objective)
    constraints = []

    def normalized(cols):
        row = np.zeros(n_vars)
        row[cols] = 1.0
        constraints.append((row, EQ, 1.0))

    for p in range(m.n_pixels):
        normalized([pixel_map[(p, x)] for x in range(2) if keep_pix[p][x]])
    for h in range(m.n_windows):
        normalized(
            [window_map[(h, y)] for y in range(m.n_patterns) if keep_win[h][y]]
        )
    for h in range(m.n_windows):
        if not win_free[h]:
            continue
        for slot in range(m.side * m.side):
            p = int(m.pix_index[h, slot])
            if not pix_free[p]:
                continue
            for x in range(2):
                row = np.zeros(n_vars)
                for y in range(m.n_patterns):
                    if keep_win[h][y]:
                        row[link_map[(h, slot, x, y)]] = 1.0
                row[pixel_map[(p, x)]] = -1.0
                constraints.append((row, EQ, 0.0))
            for y in range(m.n_patterns):
                if not keep_win[h][y]:
                    continue
                row = np.zeros(n_vars)
                for x in range(2):
                    row[link_map[(h, slot, x, y)]] = 1.0
                row[window_map[(h, y)]] = -1.0
                constraints.append((row, EQ, 0.0))
    for idx, e in enumerate(m.edges):
        fu, fv = m.flat(e.u), m.flat(e.v)
        if not (pix_free[fu] and pix_free[fv]):
            continue
        for xu in range(2):
            row = np.zeros(n_vars)
            for xv in range(2):
                row[grid_map[(idx, xu, xv)]] = 1.0
            row[pixel_map[(fu, xu)]] = -1.0
            constraints.append((row, EQ, 0.0))
        for xv in range(2):
            row = np.zeros(n_vars)
            for xu in range(2):
                row[grid_map[(idx, xu, xv)]] = 1.0
            row[pixel_map[(fv, xv)]] = -1.0
            constraints.append((row, EQ, 0.0))

    program = LinearProgram(
        objective=np.array(objective), constraints=constraints
    )
    maps = {
        "pixel": pixel_map,
        "window": window_map,
        "link": link_map,
        "grid": grid_map,
    }
    return program, maps


def relaxed_pixel_values(
    model: PairwiseModel, maps: dict, solution_values: np.ndarray
) -> np.ndarray:
    """Foreground indicator per pixel from a restricted-LP solution (pruned
    labels count as 0)."""
    out = np.zeros(model.n_pixels)
    for (p, x), col in maps["pixel"].items():
        if x == 1:
            out[p] = solution_values[col]
    return out.reshape(model.height, model.width)
