"""Per-box inference on 2-D and 3-D cases."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .dataio import CaseRecord
from .preprocess import PreparedInput, prepare_image
from .prompts import make_prompts
from .tensor import Tensor, _sigmoid_np, no_grad, resize_bilinear_np

MODES = ("box", "box+points", "box+points+scribble")


def postprocess_mask(logits, prepared: PreparedInput, threshold: float = 0.5) -> np.ndarray:
    """Model-space logits (S, S) -> binary mask at the original image size."""
    logits = np.asarray(logits, dtype=np.float64).reshape(logits.shape[-2:])
    prob = _sigmoid_np(logits)
    rh, rw = prepared.resized_size
    prob = prob[:rh, :rw]
    prob = resize_bilinear_np(prob, prepared.original_size)
    return (prob > threshold).astype(np.uint8)


def prompt_arrays(prepared: PreparedInput, mode: str, rng, mode_for_prompts: str = "infer"):
    """Points (n, 4, 2) or None and scribbles (n, S, S) or None for every prepared box."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "box":
        return None, None
    intensity = prepared.intensity
    sets = [make_prompts(b, intensity, mode_for_prompts, rng) for b in prepared.boxes]
    points = np.stack([p.points for p in sets])
    scribbles = np.stack([p.scribble_mask for p in sets]) if mode == "box+points+scribble" else None
    return points, scribbles


def predict_image(model, img2d: np.ndarray, boxes, mode: str = "box+points+scribble", rng=None,
                  threshold: float = 0.5):
    """Binary masks (n_boxes, H, W) for one 2-D image."""
    rng = np.random.default_rng(0) if rng is None else rng
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    h, w = img2d.shape[:2]
    if len(boxes) == 0:
        return np.zeros((0, h, w), dtype=np.uint8)
    prepared = prepare_image(img2d, boxes, model.cfg.img_size)
    points, scribbles = prompt_arrays(prepared, mode, rng)
    dtype = next(iter(model.params.values())).dtype
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            enc = model.encode_image(_batch_image(prepared.image, dtype))
            enc = _repeat(enc, len(boxes))
            out = model.decode(enc, prepared.boxes, points, scribbles)
    finally:
        model.train(was_training)
    return np.stack([postprocess_mask(l[0], prepared, threshold) for l in out.mask_logits.data])


def _batch_image(image, dtype):
    return Tensor(image[None].astype(dtype))


def _repeat(enc, n):
    if n == 1:
        return enc
    return enc.map(lambda t: Tensor(np.repeat(t.data, n, axis=0)))


def predict_case(model, case: CaseRecord, mode: str = "box+points+scribble", seed: int = 0,
                 threshold: float = 0.5) -> np.ndarray:
    """Label map (u8) matching the case's spatial shape; box ``k`` paints label ``k + 1``.

    3-D cases are segmented slice by slice over each box's inclusive z range
    (all slices when no range is given). Later boxes overwrite earlier ones.
    """
    rng = np.random.default_rng(seed)
    if not case.is_3d:
        segs = np.zeros(case.hw, dtype=np.uint8)
        masks = predict_image(model, case.image, case.boxes, mode, rng, threshold)
        for k, m in enumerate(masks):
            segs[m > 0] = k + 1
        return segs
    depth = case.image.shape[0]
    segs = np.zeros(case.image.shape, dtype=np.uint8)
    for k, box in enumerate(np.asarray(case.boxes).reshape(-1, 4)):
        z0, z1 = (0, depth - 1) if case.z_ranges is None else case.z_ranges[k]
        for z in range(max(int(z0), 0), min(int(z1), depth - 1) + 1):
            m = predict_image(model, case.image[z], box[None], mode, rng, threshold)[0]
            segs[z][m > 0] = k + 1
    return segs


def gt_for_box(case: CaseRecord, k: int) -> Optional[np.ndarray]:
    """Binary target of box ``k``: label ``k + 1`` for multi-label gts, any foreground otherwise."""
    if case.gts is None:
        return None
    gts = np.asarray(case.gts)
    if gts.max(initial=0) > 1:
        return (gts == k + 1).astype(np.uint8)
    return (gts > 0).astype(np.uint8)
