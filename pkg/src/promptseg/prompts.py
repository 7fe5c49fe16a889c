"""Box-derived point and scribble prompts.

Coordinates are continuous ``(x, y)`` positions in model-input space; pixel
``(c, r)`` spans ``[c, c+1) x [r, r+1)`` and is sampled through its centre.
A pixel belongs to a region when its centre lies inside the half-open region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import ContractError

POINT_RANGES = (1 / 5, 2 / 5)
SCRIBBLE_RANGES = (1 / 8, 1 / 6)
SCRIBBLE_CONTROL_POINTS = 4


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ContractError(f"invalid box {self.as_tuple()}")

    @classmethod
    def of(cls, b):
        return b if isinstance(b, Box) else cls(*(float(v) for v in b))

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def center(self):
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def contains(self, x, y):
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def quadrants(self) -> List["Box"]:
        """NW, NE, SW, SE sub-boxes split at the centre."""
        cx, cy = self.center
        return [
            Box(self.x_min, self.y_min, cx, cy),
            Box(cx, self.y_min, self.x_max, cy),
            Box(self.x_min, cy, cx, self.y_max),
            Box(cx, cy, self.x_max, self.y_max),
        ]


@dataclass(frozen=True)
class ShiftRanges:
    w_lo: float
    w_hi: float
    h_lo: float
    h_hi: float

    def __post_init__(self):
        for lo, hi in ((self.w_lo, self.w_hi), (self.h_lo, self.h_hi)):
            if not (0 <= lo <= hi <= 0.5 and lo < 0.5):
                raise ContractError(f"invalid shift range ({lo}, {hi})")

    @classmethod
    def both(cls, lo, hi):
        return cls(lo, hi, lo, hi)


@dataclass
class PromptSet:
    points: np.ndarray  # (4, 2) x, y
    point_labels: np.ndarray  # (4,) 1 = positive point
    corners: np.ndarray  # (2, 2) top-left, bottom-right
    corner_labels: np.ndarray  # (2,) 2 = top-left, 3 = bottom-right
    scribble_mask: np.ndarray  # (S, S) uint8 in {0, 1}
    polyline: List[Tuple[int, int]] = field(default_factory=list)
    point_box: Box = None
    scribble_box: Box = None


def pixels_in(box: Box, shape) -> Tuple[np.ndarray, np.ndarray]:
    """Column and row index ranges of pixels whose centres lie in ``box``."""
    h, w = shape
    cols = np.arange(max(int(np.floor(box.x_min - 0.5)), 0), min(int(np.ceil(box.x_max)), w))
    rows = np.arange(max(int(np.floor(box.y_min - 0.5)), 0), min(int(np.ceil(box.y_max)), h))
    cols = cols[(cols + 0.5 >= box.x_min) & (cols + 0.5 < box.x_max)]
    rows = rows[(rows + 0.5 >= box.y_min) & (rows + 0.5 < box.y_max)]
    return cols, rows


def nonzero_pixels(box: Box, intensity: np.ndarray) -> np.ndarray:
    """(k, 2) array of (col, row) for non-zero pixels inside ``box``, row-major order."""
    cols, rows = pixels_in(box, intensity.shape)
    if cols.size == 0 or rows.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    sub = intensity[rows[0]: rows[-1] + 1, cols[0]: cols[-1] + 1]
    r, c = np.nonzero(sub)
    return np.stack([c + cols[0], r + rows[0]], axis=1)


def shrink_box(box, ranges: ShiftRanges, rng) -> Box:
    """Move all four sides inward by random fractions of the box width/height."""
    box = Box.of(box)
    w, h = box.width, box.height
    shift_w = rng.uniform(ranges.w_lo * w, ranges.w_hi * w) if ranges.w_hi > ranges.w_lo else ranges.w_lo * w
    shift_h = rng.uniform(ranges.h_lo * h, ranges.h_hi * h) if ranges.h_hi > ranges.h_lo else ranges.h_lo * h
    return Box(box.x_min + shift_w, box.y_min + shift_h, box.x_max - shift_w, box.y_max - shift_h)


def quadrant_points(box, intensity: np.ndarray, rng) -> np.ndarray:
    """One point per quadrant (NW, NE, SW, SE) on a non-zero pixel, else the quadrant centre."""
    box = Box.of(box)
    points = np.zeros((4, 2), dtype=np.float64)
    for i, quad in enumerate(box.quadrants()):
        candidates = nonzero_pixels(quad, intensity)
        if len(candidates) == 0:
            points[i] = quad.center
        else:
            c, r = candidates[rng.integers(len(candidates))]
            points[i] = (c + 0.5, r + 0.5)
    return points


def generate_scribble(box, intensity: np.ndarray, rng) -> List[Tuple[int, int]]:
    """Random 3-segment polyline through non-zero pixels of ``box``; empty if there are none."""
    box = Box.of(box)
    candidates = nonzero_pixels(box, intensity)
    if len(candidates) == 0:
        return []
    k = min(SCRIBBLE_CONTROL_POINTS, len(candidates))
    picks = rng.choice(len(candidates), size=k, replace=False)
    return [(int(c), int(r)) for c, r in candidates[picks]]


def bresenham(x0, y0, x1, y1) -> List[Tuple[int, int]]:
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
    err = dx + dy
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize_scribble(polyline, size: int = 256) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.uint8)
    if not polyline:
        return mask
    for x, y in polyline:
        if not (0 <= x < size and 0 <= y < size):
            raise ContractError(f"scribble point {(x, y)} outside [0, {size})")
    segments = zip(polyline[:-1], polyline[1:]) if len(polyline) > 1 else [(polyline[0], polyline[0])]
    for (x0, y0), (x1, y1) in segments:
        for x, y in bresenham(x0, y0, x1, y1):
            mask[y, x] = 1
    return mask


def scribble_mask_for(box, intensity: np.ndarray, rng) -> Tuple[np.ndarray, list]:
    """Rasterized scribble restricted to non-zero pixels inside ``box``."""
    box = Box.of(box)
    polyline = generate_scribble(box, intensity, rng)
    mask = rasterize_scribble(polyline, intensity.shape[0])
    if polyline:
        inside = np.zeros_like(mask)
        cols, rows = pixels_in(box, intensity.shape)
        if cols.size and rows.size:
            inside[rows[0]: rows[-1] + 1, cols[0]: cols[-1] + 1] = 1
        mask &= inside & (intensity != 0)
    return mask, polyline


def make_prompts(box, intensity: np.ndarray, mode: str, rng) -> PromptSet:
    """Points and scribble for one box; ``mode`` is "train" (whole box) or "infer" (shrunken)."""
    box = Box.of(box)
    if mode == "train":
        point_box = scribble_box = box
    elif mode == "infer":
        point_box = shrink_box(box, ShiftRanges.both(*POINT_RANGES), rng)
    else:
        raise ContractError(f"unknown prompt mode {mode!r}")
    points = quadrant_points(point_box, intensity, rng)
    if mode == "infer":
        scribble_box = shrink_box(box, ShiftRanges.both(*SCRIBBLE_RANGES), rng)
    mask, polyline = scribble_mask_for(scribble_box, intensity, rng)
    return PromptSet(
        points=points,
        point_labels=np.ones(4, dtype=np.int64),
        corners=np.array([[box.x_min, box.y_min], [box.x_max, box.y_max]]),
        corner_labels=np.array([2, 3]),
        scribble_mask=mask,
        polyline=polyline,
        point_box=point_box,
        scribble_box=scribble_box,
    )
