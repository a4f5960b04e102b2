"""Problem constructors and baselines built on top of the energy model.

Covers the three applications: shape inpainting (hard seed constraints as
large-but-finite unaries), seeded color segmentation (Gaussian-mixture
likelihood unaries), and a quantized-direction shortest-path baseline that
measures how a direction-limited curvature model behaves on lines and arcs.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .core import BIG

FOREGROUND = 255
BACKGROUND = 0
FREE = 128

COV_EPS_SCALE = 1e-6
COV_EPS_FLOOR = 1e-12
EM_STOP_REL = 1e-10
UNARY_CLIP = 1e6

SIXTEEN_OFFSETS = (
    (1, 0), (0, 1), (-1, 0), (0, -1),
    (1, 1), (1, -1), (-1, 1), (-1, -1),
    (2, 1), (1, 2), (-1, 2), (-2, 1),
    (-2, -1), (-1, -2), (1, -2), (2, -1),
)


class TaskError(ValueError):
    """Raised for invalid task inputs."""


class NoPathError(TaskError):
    """Raised when the goal state is unreachable."""


@dataclass(frozen=True)
class SeedMask:
    """Per-pixel constraint tags: 255 = foreground-constrained,
    0 = background-constrained, 128 = free."""

    tags: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.tags, dtype=np.uint8)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise TaskError(f"tags must be 2-d, got shape {arr.shape}")
        if not np.isin(arr, (FOREGROUND, BACKGROUND, FREE)).all():
            raise TaskError("tags must be 0, 128, or 255")
        arr.flags.writeable = False
        object.__setattr__(self, "tags", arr)

    @property
    def dims(self) -> tuple[int, int]:
        """(width, height)."""
        return (self.tags.shape[1], self.tags.shape[0])

    @property
    def foreground(self) -> np.ndarray:
        return self.tags == FOREGROUND

    @property
    def background(self) -> np.ndarray:
        return self.tags == BACKGROUND

    @property
    def free(self) -> np.ndarray:
        return self.tags == FREE

    @classmethod
    def all_free(cls, dims: tuple[int, int]) -> "SeedMask":
        w, h = dims
        return cls(np.full((h, w), FREE, dtype=np.uint8))


def inpainting_unaries(mask: SeedMask) -> np.ndarray:
    """Hard constraints as unaries: the forbidden label costs BIG, the
    required label 0; free pixels cost 0 either way."""
    w, h = mask.dims
    unaries = np.zeros((h, w, 2))
    unaries[mask.foreground, 0] = BIG
    unaries[mask.background, 1] = BIG
    return unaries


def _gaussian_log_density(points: np.ndarray, mean: np.ndarray,
                          cov: np.ndarray) -> np.ndarray:
    d = mean.size
    chol = np.linalg.cholesky(cov)
    log_det = 2.0 * np.log(np.diag(chol)).sum()
    diff = points - mean
    sol = np.linalg.solve(chol, diff.T)
    quad = (sol * sol).sum(axis=0)
    return -0.5 * (d * np.log(2.0 * np.pi) + log_det + quad)


@dataclass(frozen=True)
class GaussianMixture:
    """Full-covariance Gaussian mixture over color vectors.

    ``em_trace`` records the per-iteration training log-likelihood when the
    mixture came from fit_gmm (empty for hand-built mixtures).
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    em_trace: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.covariances, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise TaskError("weights must be a non-empty vector")
        k = w.size
        if mu.ndim != 2 or mu.shape[0] != k:
            raise TaskError("means must be (k, d)")
        d = mu.shape[1]
        if cov.shape != (k, d, d):
            raise TaskError("covariances must be (k, d, d)")
        if (w <= 0).any():
            raise TaskError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise TaskError("weights must sum to 1")
        for j in range(k):
            if not np.allclose(cov[j], cov[j].T, atol=1e-12):
                raise TaskError(f"covariance {j} is not symmetric")
            try:
                np.linalg.cholesky(cov[j])
            except np.linalg.LinAlgError as exc:
                raise TaskError(
                    f"covariance {j} is not positive-definite"
                ) from exc
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "em_trace", tuple(self.em_trace))

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_density(self, points) -> np.ndarray:
        """Log mixture density for each row of ``points``."""
        x = np.asarray(points, dtype=np.float64)
        squeeze = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise TaskError(
                f"points have dimension {x.shape[1]}, model has {self.dim}"
            )
        parts = np.empty((self.n_components, x.shape[0]))
        for j in range(self.n_components):
            parts[j] = np.log(self.weights[j]) + _gaussian_log_density(
                x, self.means[j], self.covariances[j]
            )
        top = parts.max(axis=0)
        out = top + np.log(np.exp(parts - top).sum(axis=0))
        return out[0] if squeeze else out


def _kmeans_plus_plus(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(k - 1):
        centers = x[chosen]
        d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1).min(axis=1)
        total = d2.sum()
        if total <= 0:
            chosen.append(int(rng.integers(n)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
    return x[chosen].copy()


def fit_gmm(colors, k: int, seed: int = 0,
            max_iterations: int = 100) -> GaussianMixture:
    """Expectation-maximization from a k-means++ start.

    Covariances are regularized by eps * identity with
    eps = max(1e-6 * data variance, 1e-12).  The recorded log-likelihood
    trace never decreases: if a numerical step would lower it the previous
    parameters are kept and fitting stops.
    """
    x = np.asarray(colors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise TaskError("colors must be a (n, d) array")
    n, d = x.shape
    if k < 1:
        raise TaskError("k must be at least 1")
    if n < k:
        raise TaskError(f"need at least {k} samples, got {n}")
    rng = np.random.default_rng(seed)
    eps = max(COV_EPS_SCALE * float(x.var(axis=0).mean()), COV_EPS_FLOOR)
    centers = _kmeans_plus_plus(x, k, rng)
    assign = ((x[:, None, :] - centers[None]) ** 2).sum(-1).argmin(axis=1)
    weights = np.empty(k)
    means = np.empty((k, d))
    covs = np.empty((k, d, d))
    for j in range(k):
        member = x[assign == j]
        if member.shape[0] == 0:
            weights[j] = 1.0
            means[j] = centers[j]
            covs[j] = np.eye(d) * eps
        else:
            weights[j] = member.shape[0]
            means[j] = member.mean(axis=0)
            diff = member - means[j]
            covs[j] = diff.T @ diff / member.shape[0] + np.eye(d) * eps
    weights /= weights.sum()

    trace: list[float] = []
    kept = (weights.copy(), means.copy(), covs.copy())
    for _ in range(max_iterations):
        logs = np.empty((k, n))
        for j in range(k):
            logs[j] = np.log(weights[j]) + _gaussian_log_density(
                x, means[j], covs[j]
            )
        top = logs.max(axis=0)
        norm = top + np.log(np.exp(logs - top).sum(axis=0))
        ll = float(norm.sum())
        if trace and ll < trace[-1] - 1e-12:
            weights, means, covs = kept
            break
        trace.append(ll)
        if len(trace) > 1:
            if abs(trace[-1] - trace[-2]) < EM_STOP_REL * max(1.0, abs(ll)):
                break
        kept = (weights.copy(), means.copy(), covs.copy())
        resp = np.exp(logs - norm)
        mass = resp.sum(axis=1)
        weights = np.maximum(mass, 1e-12)
        weights = weights / weights.sum()
        for j in range(k):
            if mass[j] < 1e-12:
                continue
            means[j] = (resp[j][:, None] * x).sum(axis=0) / mass[j]
            diff = x - means[j]
            covs[j] = (resp[j][:, None] * diff).T @ diff / mass[j] + (
                np.eye(d) * eps
            )
    return GaussianMixture(weights=weights, means=means, covariances=covs,
                           em_trace=tuple(trace))


def segmentation_unaries(image, foreground_model: GaussianMixture,
                         background_model: GaussianMixture,
                         prior_weight: float,
                         mask: SeedMask | None = None) -> np.ndarray:
    """Negative log-likelihood unaries divided by the prior strength.

    The label-1 cost is -log p_fg(color)/prior_weight, label-0 likewise for
    the background model; dividing the data term is equivalent to scaling
    the (fixed-scale) window energy up by prior_weight.  Seed-mask pixels
    additionally get a BIG penalty on the forbidden label.

    The data term is clipped to +-1e6: mixtures fitted to a handful of
    stroke pixels get near-singular covariances whose tails would otherwise
    produce costs rivaling the BIG seed penalty and could override a hard
    constraint.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise TaskError(f"image must be (h, w, channels), got {img.shape}")
    if prior_weight <= 0:
        raise TaskError("prior_weight must be positive")
    h, w, d = img.shape
    flat = img.reshape(-1, d)
    unaries = np.empty((h, w, 2))
    unaries[:, :, 1] = np.clip(
        -foreground_model.log_density(flat) / prior_weight,
        -UNARY_CLIP, UNARY_CLIP,
    ).reshape(h, w)
    unaries[:, :, 0] = np.clip(
        -background_model.log_density(flat) / prior_weight,
        -UNARY_CLIP, UNARY_CLIP,
    ).reshape(h, w)
    if mask is not None:
        if mask.dims != (w, h):
            raise TaskError(
                f"mask dims {mask.dims} do not match image {(w, h)}"
            )
        unaries[mask.foreground, 0] += BIG
        unaries[mask.background, 1] += BIG
    return unaries


def baseline_transition_cost(angle: float, l1: float, l2: float) -> float:
    """Squared-curvature charge for two consecutive straight segments:
    angle^2 * (l1 + l2) / (l1 * l2)."""
    if l1 <= 0 or l2 <= 0:
        raise TaskError("segment lengths must be positive")
    if not 0.0 <= angle <= np.pi + 1e-12:
        raise TaskError(f"angle must lie in [0, pi], got {angle}")
    return float(angle * angle * (l1 + l2) / (l1 * l2))


def turn_angle(a, b) -> float:
    """Angle in [0, pi] between two direction vectors (0 = collinear
    continuation)."""
    ax, ay = a
    bx, by = b
    if (ax == 0 and ay == 0) or (bx == 0 and by == 0):
        raise TaskError("direction vectors must be nonzero")
    cross = ax * by - ay * bx
    dot = ax * bx + ay * by
    return abs(math.atan2(cross, dot))


def polyline_cost(points) -> float:
    """Total transition cost along a polyline (no length terms): the sum of
    baseline_transition_cost over consecutive segment pairs."""
    pts = [np.asarray(p, dtype=np.float64) for p in points]
    if len(pts) < 2:
        raise TaskError("polyline needs at least two points")
    segments = [q - p for p, q in zip(pts, pts[1:])]
    total = 0.0
    for a, b in zip(segments, segments[1:]):
        la = float(np.hypot(*a))
        lb = float(np.hypot(*b))
        total += baseline_transition_cost(turn_angle(a, b), la, lb)
    return total


@dataclass(frozen=True)
class DirectedEdgeGraph:
    """Edge-element graph on integer grid nodes: states are (node, incoming
    offset) pairs over a fixed offset set; turning between offsets is
    charged by baseline_transition_cost."""

    dims: tuple
    offsets: tuple = SIXTEEN_OFFSETS
    lengths: np.ndarray = field(init=False)
    turn_costs: np.ndarray = field(init=False)

    def __post_init__(self):
        w, h = self.dims
        if w < 1 or h < 1:
            raise TaskError(f"dims must be positive, got {self.dims}")
        offsets = tuple((int(dx), int(dy)) for dx, dy in self.offsets)
        if len(set(offsets)) != len(offsets):
            raise TaskError("offsets must be distinct")
        if any(o == (0, 0) for o in offsets):
            raise TaskError("offsets must be nonzero")
        object.__setattr__(self, "dims", (int(w), int(h)))
        object.__setattr__(self, "offsets", offsets)
        n = len(offsets)
        lengths = np.array([np.hypot(dx, dy) for dx, dy in offsets])
        turn = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                turn[i, j] = baseline_transition_cost(
                    turn_angle(offsets[i], offsets[j]),
                    float(lengths[i]), float(lengths[j]),
                )
        lengths.flags.writeable = False
        turn.flags.writeable = False
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "turn_costs", turn)

    def in_bounds(self, node) -> bool:
        x, y = node
        w, h = self.dims
        return 0 <= x < w and 0 <= y < h

    def offset_index(self, offset) -> int:
        key = (int(offset[0]), int(offset[1]))
        try:
            return self.offsets.index(key)
        except ValueError as exc:
            raise TaskError(f"offset {key} not in the offset set") from exc


def _parse_endpoint(graph: DirectedEdgeGraph, spec):
    """Endpoint as (x, y) node (free direction) or ((x, y), offset)."""
    if (isinstance(spec, tuple) and len(spec) == 2
            and isinstance(spec[0], tuple)):
        node, offset = spec
        idx = (int(offset) if isinstance(offset, (int, np.integer))
               else graph.offset_index(offset))
        if not 0 <= idx < len(graph.offsets):
            raise TaskError(f"offset index {idx} out of range")
    else:
        node, idx = spec, None
    node = (int(node[0]), int(node[1]))
    if not graph.in_bounds(node):
        raise TaskError(f"node {node} outside grid {graph.dims}")
    return node, idx


def baseline_optimal_path(graph: DirectedEdgeGraph, start, goal):
    """Least-turn-cost path via Dijkstra over (node, incoming-offset)
    states.

    Endpoints may be plain nodes (direction left free: the first segment is
    not charged, the last may end with any offset) or (node, offset) pairs
    fixing the terminal edge elements.  Returns (node polyline, cost);
    raises NoPathError when the goal is unreachable.
    """
    start_node, start_off = _parse_endpoint(graph, start)
    goal_node, goal_off = _parse_endpoint(graph, goal)
    if start_node == goal_node:
        raise TaskError("start and goal must be distinct nodes")
    w, _ = graph.dims
    n_off = len(graph.offsets)

    def node_id(node):
        return node[1] * w + node[0]

    start_state = (node_id(start_node), -1 if start_off is None else start_off)
    dist = {start_state: 0.0}
    parents: dict = {start_state: None}
    heap = [(0.0, start_state, start_node)]
    settled = set()
    final_state = None
    while heap:
        cost, state, node = heapq.heappop(heap)
        if state in settled:
            continue
        settled.add(state)
        if node == goal_node and (goal_off is None or state[1] == goal_off):
            final_state = state
            break
        _, incoming = state
        for j, (dx, dy) in enumerate(graph.offsets):
            nxt = (node[0] + dx, node[1] + dy)
            if not graph.in_bounds(nxt):
                continue
            step = 0.0 if incoming < 0 else float(
                graph.turn_costs[incoming, j]
            )
            cand = cost + step
            nxt_state = (node_id(nxt), j)
            if nxt_state in settled:
                continue
            if cand < dist.get(nxt_state, np.inf):
                dist[nxt_state] = cand
                parents[nxt_state] = state
                heapq.heappush(heap, (cand, nxt_state, nxt))
    if final_state is None:
        raise NoPathError(f"goal {goal} unreachable from {start}")
    path = []
    state = final_state
    while state is not None:
        nid, _ = state
        path.append((nid % w, nid // w))
        state = parents[state]
    path.reverse()
    return path, dist[final_state]
