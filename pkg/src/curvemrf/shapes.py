"""Continuous shapes, rasterization, and the quadratic training-patch sampler.

Shapes come in two closed families: circles and star-convex curves whose
polar radius is a low-order trigonometric series.  Both expose analytic
curvature, so the clipped squared-curvature cost integrated along the
boundary can be evaluated to quadrature accuracy and used as ground truth.

Training patches are cut from a third family: single quadratic arcs
``y' = a x'^2 + d`` in a uniformly rotated frame through the window center.
Each sample records the patch labels together with the tangent angle and
signed curvature at the boundary point nearest the center.

Pixel convention: the pixel at column ``ix``, row ``iy`` covers the unit
square with center ``(ix + 0.5, iy + 0.5)``; a pixel is foreground iff its
center lies strictly inside the shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinaryLabeling


class GenerationError(RuntimeError):
    """Raised when rejection sampling exhausts its attempt budget."""


def curvature_cost(kappa: float, f_max: float) -> float:
    """Clipped squared curvature ``min(kappa^2, f_max)``."""
    if f_max <= 0:
        raise ValueError(f"f_max must be positive, got {f_max}")
    return float(min(kappa * kappa, f_max))


@dataclass(frozen=True)
class Circle:
    radius: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def point(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (self.cx + self.radius * np.cos(t), self.cy + self.radius * np.sin(t))

    def curvature(self, t) -> np.ndarray:
        return np.full_like(np.asarray(t, dtype=np.float64), 1.0 / self.radius)

    def speed(self, t) -> np.ndarray:
        """|dp/dt| of the parametrization."""
        return np.full_like(np.asarray(t, dtype=np.float64), self.radius)

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        return (px - self.cx) ** 2 + (py - self.cy) ** 2 < self.radius**2


@dataclass(frozen=True)
class FourierShape:
    """Star-convex curve ``rho(t) = base + sum_k s_k sin(kt) + c_k cos(kt)``."""

    base: float
    sin_coeffs: tuple[float, ...]
    cos_coeffs: tuple[float, ...]
    cx: float
    cy: float

    def __post_init__(self):
        object.__setattr__(self, "sin_coeffs", tuple(float(v) for v in self.sin_coeffs))
        object.__setattr__(self, "cos_coeffs", tuple(float(v) for v in self.cos_coeffs))
        if len(self.sin_coeffs) != len(self.cos_coeffs):
            raise ValueError("sin and cos coefficient lists must have equal length")

    def _series(self, t, deriv: int) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = np.full_like(t, self.base if deriv == 0 else 0.0)
        for k, (s, c) in enumerate(zip(self.sin_coeffs, self.cos_coeffs), start=1):
            if deriv == 0:
                out = out + s * np.sin(k * t) + c * np.cos(k * t)
            elif deriv == 1:
                out = out + k * (s * np.cos(k * t) - c * np.sin(k * t))
            else:
                out = out - k * k * (s * np.sin(k * t) + c * np.cos(k * t))
        return out

    def radius(self, t) -> np.ndarray:
        return self._series(t, 0)

    def point(self, t) -> tuple[np.ndarray, np.ndarray]:
        r = self.radius(t)
        t = np.asarray(t, dtype=np.float64)
        return (self.cx + r * np.cos(t), self.cy + r * np.sin(t))

    def curvature(self, t) -> np.ndarray:
        """Signed curvature of a polar curve (positive where the boundary
        bends toward the interior, i.e. everywhere for convex shapes)."""
        r = self._series(t, 0)
        r1 = self._series(t, 1)
        r2 = self._series(t, 2)
        return (r * r + 2.0 * r1 * r1 - r * r2) / (r * r + r1 * r1) ** 1.5

    def speed(self, t) -> np.ndarray:
        r = self._series(t, 0)
        r1 = self._series(t, 1)
        return np.sqrt(r * r + r1 * r1)

    def contains(self, px, py) -> np.ndarray:
        dx = np.asarray(px, dtype=np.float64) - self.cx
        dy = np.asarray(py, dtype=np.float64) - self.cy
        angle = np.arctan2(dy, dx)
        return dx * dx + dy * dy < self.radius(angle) ** 2


def true_total_cost(shape, f_max: float, samples: int = 200_000) -> tuple[float, float]:
    """Quadrature of (integral of clipped squared curvature, boundary length).

    Uses the periodic rectangle rule on a uniform parameter grid, which is
    spectrally accurate for these smooth closed curves.
    """
    if samples < 1000:
        raise ValueError(f"need at least 1000 quadrature samples, got {samples}")
    t = np.arange(samples) * (2.0 * np.pi / samples)
    kappa = shape.curvature(t)
    speed = shape.speed(t)
    f = np.minimum(kappa * kappa, f_max)
    dt = 2.0 * np.pi / samples
    return float((f * speed).sum() * dt), float(speed.sum() * dt)


def circle_total_cost(radius: float, f_max: float) -> float:
    """Closed form: perimeter times the clipped cost of constant curvature."""
    return 2.0 * np.pi * radius * curvature_cost(1.0 / radius, f_max)


def _fits_grid(cx: float, cy: float, reach: float, dims: tuple[int, int]) -> bool:
    w, h = dims
    margin = min(cx, cy, w - cx, h - cy)
    return reach <= margin - 1.0


def make_circle(
    dims: tuple[int, int] = (100, 100),
    rng: np.random.Generator | None = None,
    radius: float | None = None,
    cx: float | None = None,
    cy: float | None = None,
    radius_range: tuple[float, float] = (5.0, 50.0),
    max_attempts: int = 1000,
) -> Circle:
    """A circle inside the grid with one pixel of clearance.

    With explicit parameters the fit is validated; otherwise the radius is
    drawn uniformly from ``radius_range`` and the center gets a sub-pixel
    shift off the grid center, redrawing until the circle fits.
    """
    w, h = dims
    if radius is not None:
        cx = w / 2.0 if cx is None else cx
        cy = h / 2.0 if cy is None else cy
        if not _fits_grid(cx, cy, radius, dims):
            raise ValueError(
                f"circle r={radius} at ({cx}, {cy}) does not fit {dims} with margin"
            )
        return Circle(radius, cx, cy)
    if rng is None:
        raise ValueError("either radius or rng must be given")
    for _ in range(max_attempts):
        r = rng.uniform(*radius_range)
        ccx = w / 2.0 + rng.uniform(0.0, 1.0)
        ccy = h / 2.0 + rng.uniform(0.0, 1.0)
        if _fits_grid(ccx, ccy, r, dims):
            return Circle(r, ccx, ccy)
    raise GenerationError(f"no circle from {radius_range} fits grid {dims}")


def make_fourier_shape(
    rng: np.random.Generator,
    dims: tuple[int, int] = (100, 100),
    n_harmonics: int = 5,
    base_range: tuple[float, float] = (15.0, 35.0),
    min_radius: float = 3.0,
    max_attempts: int = 1000,
) -> FourierShape:
    """A random smooth star-convex shape fitting the grid.

    Harmonic amplitudes shrink with frequency (scale ``base / (4k)``);
    candidates whose polar radius dips below ``min_radius`` or whose reach
    exits the grid are rejected and redrawn.
    """
    w, h = dims
    probe = np.arange(4096) * (2.0 * np.pi / 4096)
    for _ in range(max_attempts):
        base = rng.uniform(*base_range)
        sin_c = [rng.normal(0.0, base / (4.0 * k)) for k in range(1, n_harmonics + 1)]
        cos_c = [rng.normal(0.0, base / (4.0 * k)) for k in range(1, n_harmonics + 1)]
        cx = w / 2.0 + rng.uniform(0.0, 1.0)
        cy = h / 2.0 + rng.uniform(0.0, 1.0)
        shape = FourierShape(base, tuple(sin_c), tuple(cos_c), cx, cy)
        rho = shape.radius(probe)
        if rho.min() < min_radius:
            continue
        if _fits_grid(cx, cy, float(rho.max()), dims):
            return shape
    raise GenerationError(f"no admissible shape after {max_attempts} draws")


def rasterize(shape, dims: tuple[int, int]) -> BinaryLabeling:
    """Label each pixel by whether its center lies strictly inside the shape."""
    w, h = dims
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    px, py = np.meshgrid(xs, ys)
    return BinaryLabeling(shape.contains(px, py).astype(np.uint8))


def boundary_count(x: BinaryLabeling) -> int:
    """Number of 2x2 pixel blocks containing both labels."""
    blocks = np.lib.stride_tricks.sliding_window_view(x.labels, (2, 2))
    mixed = blocks.max(axis=(2, 3)) != blocks.min(axis=(2, 3))
    return int(mixed.sum())


def cut_edge_count(x: BinaryLabeling) -> int:
    """Number of 4-neighbor pixel pairs with differing labels.

    Agrees with ``boundary_count`` for closed shapes away from the grid
    border.
    """
    lab = x.labels
    horiz = (lab[:, 1:] != lab[:, :-1]).sum()
    vert = (lab[1:, :] != lab[:-1, :]).sum()
    return int(horiz + vert)


# --- quadratic training patches -------------------------------------------

@dataclass(frozen=True)
class TrainingSample:
    """One window patch cut from a quadratic arc, with its local geometry.

    ``patch`` is the flat row-major K*K labeling; ``tangent_angle`` orients
    the boundary so foreground lies on its left; ``kappa`` is the signed
    curvature at the boundary point nearest the window center, and
    ``target_cost`` its clipped squared value.  The generating arc is kept
    (``frame_angle``, ``bend``, ``offset``) so the geometry can be re-derived.
    """

    side: int
    patch: np.ndarray
    tangent_angle: float
    kappa: float
    target_cost: float
    frame_angle: float
    bend: float
    offset: float

    def __post_init__(self):
        p = np.ascontiguousarray(self.patch, dtype=np.uint8).reshape(-1)
        if p.size != self.side * self.side:
            raise ValueError(f"patch must have {self.side ** 2} entries, got {p.size}")
        p.flags.writeable = False
        object.__setattr__(self, "patch", p)


def _rotated_coords(side: int, frame_angle: float) -> tuple[np.ndarray, np.ndarray]:
    """Pixel centers of a side x side window in the rotated frame whose origin
    is the window center (the corner point between the four center pixels)."""
    half = side / 2.0
    ix, iy = np.meshgrid(np.arange(side), np.arange(side))
    dx = (ix + 0.5) - half
    dy = (iy + 0.5) - half
    cos_a, sin_a = np.cos(frame_angle), np.sin(frame_angle)
    xp = dx * cos_a + dy * sin_a
    yp = -dx * sin_a + dy * cos_a
    return xp.reshape(-1), yp.reshape(-1)


def quadratic_patch(
    side: int, frame_angle: float, bend: float, offset: float
) -> np.ndarray:
    """Rasterize the region above ``y' = bend * x'^2 + offset`` in the rotated
    frame as a flat row-major patch (1 on or above the arc)."""
    if side < 2:
        raise ValueError(f"side must be >= 2, got {side}")
    xp, yp = _rotated_coords(side, frame_angle)
    return (yp >= bend * xp * xp + offset).astype(np.uint8)


def quadratic_nearest_point(bend: float, offset: float, side: int) -> float:
    """Abscissa (in the rotated frame) of the arc point nearest the window
    center, found by a dense scan plus golden-section refinement."""
    half = side / 2.0

    def dist2(x):
        y = bend * x * x + offset
        return x * x + y * y

    grid = np.linspace(-half, half, 2001)
    best = grid[int(np.argmin(dist2(grid)))]
    step = grid[1] - grid[0]
    lo, hi = best - step, best + step
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    for _ in range(60):
        if dist2(c) < dist2(d):
            b, d = d, c
            c = b - inv_phi * (b - a)
        else:
            a, c = c, d
            d = a + inv_phi * (b - a)
    return float((a + b) / 2.0)


def quadratic_geometry(
    side: int, frame_angle: float, bend: float, offset: float
) -> tuple[float, float]:
    """(tangent_angle, signed curvature) of the arc at the point nearest the
    window center, with foreground (the region above the arc) on the left of
    the tangent direction."""
    x_star = quadratic_nearest_point(bend, offset, side)
    slope = 2.0 * bend * x_star
    kappa = 2.0 * bend / (1.0 + slope * slope) ** 1.5
    angle = (frame_angle + np.arctan2(slope, 1.0)) % (2.0 * np.pi)
    return float(angle), float(kappa)


def sample_quadratic_patch(
    rng: np.random.Generator,
    side: int,
    f_max: float,
    max_attempts: int = 10_000,
) -> TrainingSample:
    """Draw one boundary training patch.

    The frame angle is uniform over the circle, the arc passes within half a
    pixel of the window center, and the curvature magnitude at the center is
    uniform on [0, sqrt(2 f_max)] with random sign, covering both the
    quadratic branch and the clipped branch of the cost.  Draws are rejected
    until the 2x2 center block is mixed.
    """
    if side < 4:
        raise ValueError(f"training patches need side >= 4, got {side}")
    if f_max <= 0:
        raise ValueError(f"f_max must be positive, got {f_max}")
    o = side // 2 - 1
    center_slots = [
        (o + dy) * side + (o + dx) for dy in range(2) for dx in range(2)
    ]
    for _ in range(max_attempts):
        frame_angle = rng.uniform(0.0, 2.0 * np.pi)
        kappa_mag = rng.uniform(0.0, np.sqrt(2.0 * f_max))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        bend = sign * kappa_mag / 2.0
        offset = rng.uniform(-0.5, 0.5)
        patch = quadratic_patch(side, frame_angle, bend, offset)
        center = patch[center_slots]
        if center.min() == center.max():
            continue
        angle, kappa = quadratic_geometry(side, frame_angle, bend, offset)
        return TrainingSample(
            side=side,
            patch=patch,
            tangent_angle=angle,
            kappa=kappa,
            target_cost=curvature_cost(kappa, f_max),
            frame_angle=float(frame_angle),
            bend=float(bend),
            offset=float(offset),
        )
    raise GenerationError(f"no boundary patch after {max_attempts} draws")


@dataclass(frozen=True)
class ShapeSample:
    """A rasterized shape with its continuous ground truth."""

    labeling: BinaryLabeling
    true_cost: float
    true_length: float
    boundary_count: int


def sample_shape(
    kind: str,
    rng: np.random.Generator,
    dims: tuple[int, int],
    f_max: float,
    quadrature_samples: int = 200_000,
) -> ShapeSample:
    """Draw, rasterize and measure one random shape of the given family."""
    if kind == "circle":
        shape = make_circle(dims, rng=rng)
    elif kind == "fourier":
        shape = make_fourier_shape(rng, dims)
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    cost, length = true_total_cost(shape, f_max, quadrature_samples)
    lab = rasterize(shape, dims)
    return ShapeSample(lab, cost, length, boundary_count(lab))
