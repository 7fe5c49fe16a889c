"""Turn raw cases into fixed-size 3-channel model inputs.

Boxes use continuous pixel-edge coordinates: a box ``(x0, y0, x1, y1)``
covers pixel columns ``x0 <= c < x1``. Images are handled as (H, W) or
(H, W, 3) numpy arrays until the final channels-first conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .dataio import CaseRecord
from .errors import ContractError, SamplingError
from .tensor import resize_bilinear_np


@dataclass
class PreparedInput:
    image: np.ndarray  # (3, S, S) float32 in [0, 1]
    scale: float
    pad: Tuple[int, int]  # (right, bottom)
    boxes: np.ndarray  # (n, 4) in model-input coordinates
    original_size: Tuple[int, int]
    resized_size: Tuple[int, int]

    @property
    def intensity(self) -> np.ndarray:
        """(S, S) map that is non-zero wherever any channel is non-zero."""
        return self.image.max(axis=0)


def _round(v):
    return int(math.floor(v + 0.5))


def resize_longest_side(img: np.ndarray, target: int = 256) -> np.ndarray:
    h, w = img.shape[:2]
    scale = target / max(h, w)
    new_hw = (max(_round(h * scale), 1), max(_round(w * scale), 1))
    if img.ndim == 3:
        return np.moveaxis(resize_bilinear_np(np.moveaxis(img, -1, 0), new_hw), 0, -1)
    return resize_bilinear_np(img, new_hw)


def pad_to_square(img: np.ndarray, target: int = 256) -> np.ndarray:
    h, w = img.shape[:2]
    if h > target or w > target:
        raise ContractError(f"image {h}x{w} larger than pad target {target}")
    widths = [(0, target - h), (0, target - w)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, widths)


def normalize_intensity(img: np.ndarray, lower=0.5, upper=99.5) -> np.ndarray:
    """Clip to the [lower, upper] percentiles, then min-max scale to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = np.percentile(img, [lower, upper])
    if hi <= lo:
        lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.float32)
    out = (np.clip(img, lo, hi) - lo) / (hi - lo)
    return out.astype(np.float32)


def scale_boxes(boxes, scale: float, limit: int) -> np.ndarray:
    """Scale boxes, rounding outward (floor mins, ceil maxes) and clipping to [0, limit]."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4) * scale
    # guard against 127.99999 style float noise before floor/ceil
    b = np.round(b, 6)
    out = np.concatenate([np.floor(b[:, :2]), np.ceil(b[:, 2:])], axis=1)
    return np.clip(out, 0, limit)


def prepare_image(img2d: np.ndarray, boxes, target: int = 256) -> PreparedInput:
    """Normalize, resize and pad one (H, W) or (H, W, 3) image."""
    h, w = img2d.shape[:2]
    norm = normalize_intensity(img2d)
    resized = np.clip(resize_longest_side(norm, target), 0.0, 1.0)
    rh, rw = resized.shape[:2]
    padded = pad_to_square(resized, target).astype(np.float32)
    if padded.ndim == 2:
        chw = np.repeat(padded[None], 3, axis=0)
    else:
        chw = np.ascontiguousarray(np.moveaxis(padded, -1, 0))
    scale = target / max(h, w)
    return PreparedInput(
        image=chw,
        scale=scale,
        pad=(target - rw, target - rh),
        boxes=scale_boxes(boxes, scale, target),
        original_size=(h, w),
        resized_size=(rh, rw),
    )


def prepare_case(case: CaseRecord, slice_idx: Optional[int] = None, target: int = 256) -> PreparedInput:
    if case.is_3d:
        if slice_idx is None:
            raise ContractError("slice_idx is required for 3D cases")
        if not 0 <= slice_idx < case.image.shape[0]:
            raise ContractError(f"slice_idx {slice_idx} out of range [0, {case.image.shape[0]})")
        img = case.image[slice_idx]
    else:
        if slice_idx is not None:
            raise ContractError("slice_idx given for a 2D case")
        img = case.image
    return prepare_image(img, case.boxes, target)


def sample_slice(volume: np.ndarray, rng, gts: Optional[np.ndarray] = None):
    """Uniformly pick a slice; with ``gts`` only slices holding foreground qualify."""
    depth = volume.shape[0]
    if depth < 1:
        raise SamplingError("empty volume")
    if gts is None:
        idx = int(rng.integers(depth))
    else:
        candidates = np.flatnonzero(gts.reshape(depth, -1).any(axis=1))
        if candidates.size == 0:
            raise SamplingError("no slice with non-empty ground truth")
        idx = int(candidates[rng.integers(candidates.size)])
    return idx, volume[idx]


def flip_boxes(boxes, width=None, height=None) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    if width is not None:
        b[:, [0, 2]] = width - b[:, [2, 0]]
    if height is not None:
        b[:, [1, 3]] = height - b[:, [3, 1]]
    return b


def random_flip(img: np.ndarray, gt: Optional[np.ndarray], boxes, rng, p: float = 0.5,
                return_flags: bool = False):
    """Flip image, mask and boxes together; each spatial axis independently with prob ``p``.

    ``img`` is (..., H, W) (channels first); ``gt`` is (H, W).
    """
    h, w = img.shape[-2:]
    flip_h = bool(rng.random() < p)
    flip_v = bool(rng.random() < p)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if flip_h:
        img = img[..., ::-1]
        gt = None if gt is None else gt[..., ::-1]
        boxes = flip_boxes(boxes, width=w)
    if flip_v:
        img = img[..., ::-1, :]
        gt = None if gt is None else gt[..., ::-1, :]
        boxes = flip_boxes(boxes, height=h)
    img = np.ascontiguousarray(img)
    gt = None if gt is None else np.ascontiguousarray(gt)
    if return_flags:
        return img, gt, boxes, (flip_h, flip_v)
    return img, gt, boxes


def tight_box(mask: np.ndarray) -> np.ndarray:
    """Edge-coordinate bounding box of the non-zero pixels of a 2-D mask."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ContractError("tight_box of an empty mask")
    return np.array([xs.min(), ys.min(), xs.max() + 1, ys.max() + 1], dtype=np.float64)
