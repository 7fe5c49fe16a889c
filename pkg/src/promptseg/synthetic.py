"""Synthetic 2-D cases: soft-edged blobs on a noisy background."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import CaseRecord
from .preprocess import tight_box

SIZE = 256
MIN_AREA, MAX_AREA = 0.01, 0.40


@dataclass
class SyntheticCase:
    image: np.ndarray  # (S, S) float32
    gt: np.ndarray  # (S, S) uint8
    box: np.ndarray  # (4,) tight edge box of gt

    def to_record(self, case_id="") -> CaseRecord:
        return CaseRecord(image=self.image, gts=self.gt, boxes=self.box[None].copy(), case_id=case_id)


def _shape_field(rng, size):
    """Signed inside-ness field of a random ellipse or rectangle (> 0 inside)."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cx, cy = rng.uniform(0.2, 0.8, size=2) * size
    rx, ry = rng.uniform(0.06, 0.3, size=2) * size
    theta = rng.uniform(0, np.pi)
    c, s = np.cos(theta), np.sin(theta)
    u = ((xx - cx) * c + (yy - cy) * s) / rx
    v = (-(xx - cx) * s + (yy - cy) * c) / ry
    if rng.random() < 0.5:
        d = 1.0 - np.sqrt(u * u + v * v)
    else:
        d = 1.0 - np.maximum(np.abs(u), np.abs(v))
    return d * min(rx, ry)  # roughly in pixels


def gen_synthetic_case(rng, size: int = SIZE) -> SyntheticCase:
    """One case; the last blob drawn is the target and occludes the others."""
    n_blobs = int(rng.integers(1, 4))
    img = rng.normal(0.2, 0.05, size=(size, size))
    lo, hi = MIN_AREA * size * size, MAX_AREA * size * size
    for i in range(n_blobs):
        target = i == n_blobs - 1
        while True:
            d = _shape_field(rng, size)
            mask = d > 0
            area = mask.sum()
            if not target or lo <= area <= hi:
                break
        level = rng.uniform(0.5, 1.0)
        soft = 1.0 / (1.0 + np.exp(-np.clip(d, -30, 30) / rng.uniform(0.5, 1.5)))
        img = img * (1 - soft) + level * soft
    img = img + rng.normal(0, 0.03, size=img.shape)
    gt = mask.astype(np.uint8)
    return SyntheticCase(image=img.astype(np.float32), gt=gt, box=tight_box(gt))


def synthetic_dataset(count: int, seed: int):
    rng = np.random.default_rng(seed)
    return [gen_synthetic_case(rng).to_record(f"synth_{i:05d}") for i in range(count)]
