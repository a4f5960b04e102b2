"""Brush-stroke documents and their seed-mask rasterization.

A stroke is a polyline with a brush radius and a foreground or background
tag.  Rasterization stamps a closed disc swept along each polyline segment:
a pixel (integer lattice point) is painted when its Euclidean distance to
some segment is at most the radius.  Later strokes overwrite earlier ones.

The per-pixel test uses only elementwise double arithmetic in a fixed
formula so an independent implementation (for example in a browser) can
reproduce the mask byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .tasks import BACKGROUND, FOREGROUND, SeedMask

TAG_VALUES = {"fg": FOREGROUND, "bg": BACKGROUND}


class StrokeError(ValueError):
    """Raised for malformed stroke documents."""


@dataclass(frozen=True)
class Stroke:
    """One brush stroke: polyline points in pixel coordinates (x, y)."""

    tag: str
    radius: float
    points: tuple

    def __post_init__(self):
        if self.tag not in TAG_VALUES:
            raise StrokeError(f"tag must be 'fg' or 'bg', got {self.tag!r}")
        radius = float(self.radius)
        if not radius >= 0 or not math.isfinite(radius):
            raise StrokeError(f"radius must be finite and >= 0, got {radius}")
        pts = tuple(
            (float(p[0]), float(p[1])) for p in self.points
        )
        if not pts:
            raise StrokeError("stroke needs at least one point")
        for x, y in pts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise StrokeError(f"non-finite point ({x}, {y})")
        object.__setattr__(self, "radius", radius)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class StrokeDocument:
    """Ordered strokes over a fixed canvas size."""

    width: int
    height: int
    strokes: tuple

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise StrokeError(
                f"canvas must be positive, got {self.width}x{self.height}"
            )
        object.__setattr__(self, "strokes", tuple(self.strokes))
        for stroke in self.strokes:
            if not isinstance(stroke, Stroke):
                raise StrokeError(f"not a Stroke: {stroke!r}")

    @classmethod
    def from_json(cls, text: str) -> "StrokeDocument":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise StrokeError(f"invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise StrokeError("document must be a JSON object")
        try:
            strokes = tuple(
                Stroke(tag=s["tag"], radius=s["radius"],
                       points=tuple((p[0], p[1]) for p in s["points"]))
                for s in raw["strokes"]
            )
            return cls(width=int(raw["width"]), height=int(raw["height"]),
                       strokes=strokes)
        except (KeyError, TypeError, IndexError) as exc:
            raise StrokeError(f"malformed stroke document: {exc}") from exc

    def to_json(self) -> str:
        payload = {
            "width": self.width,
            "height": self.height,
            "strokes": [
                {"tag": s.tag, "radius": s.radius,
                 "points": [[x, y] for x, y in s.points]}
                for s in self.strokes
            ],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _stamp_segment(tags: np.ndarray, a, b, radius: float, value: int):
    height, width = tags.shape
    ax, ay = a
    bx, by = b
    x_lo = max(int(math.ceil(min(ax, bx) - radius)), 0)
    x_hi = min(int(math.floor(max(ax, bx) + radius)), width - 1)
    y_lo = max(int(math.ceil(min(ay, by) - radius)), 0)
    y_hi = min(int(math.floor(max(ay, by) + radius)), height - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return
    px = np.arange(x_lo, x_hi + 1, dtype=np.float64)[None, :]
    py = np.arange(y_lo, y_hi + 1, dtype=np.float64)[:, None]
    vx = bx - ax
    vy = by - ay
    len2 = vx * vx + vy * vy
    if len2 == 0.0:
        dx = px - ax
        dy = py - ay
        d2 = dx * dx + dy * dy
    else:
        t = ((px - ax) * vx + (py - ay) * vy) / len2
        t = np.clip(t, 0.0, 1.0)
        dx = px - (ax + t * vx)
        dy = py - (ay + t * vy)
        d2 = dx * dx + dy * dy
    inside = d2 <= radius * radius
    region = tags[y_lo:y_hi + 1, x_lo:x_hi + 1]
    region[inside] = value


def rasterize(document: StrokeDocument) -> SeedMask:
    """Stamp all strokes in order onto an all-free canvas."""
    mask = SeedMask.all_free((document.width, document.height))
    tags = mask.tags.copy()
    for stroke in document.strokes:
        value = TAG_VALUES[stroke.tag]
        pts = stroke.points
        if len(pts) == 1:
            _stamp_segment(tags, pts[0], pts[0], stroke.radius, value)
        else:
            for a, b in zip(pts, pts[1:]):
                _stamp_segment(tags, a, b, stroke.radius, value)
    return SeedMask(tags)
