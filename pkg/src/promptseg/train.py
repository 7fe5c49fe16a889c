"""Two-stage training: embedding distillation, then full-model fine-tuning.

Each step draws its data from ``default_rng([seed, step])`` so a run resumed
at step ``k`` sees exactly the batches the uninterrupted run would have seen.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dataio import CaseRecord, save_checkpoint
from .errors import ContractError, DataError, NumericError, SamplingError
from .inference import MODES, gt_for_box, predict_image
from .losses import distill_loss, total_loss
from .metrics import dsc
from .model import SegModel
from .optim import AdamW, AdamWConfig, PlateauConfig, PlateauState, lr_on_plateau
from .preprocess import prepare_image, random_flip, sample_slice
from .prompts import make_prompts
from .tensor import Tensor, no_grad, resize_bilinear_np

logger = logging.getLogger(__name__)

ENCODER_PREFIXES = ("image_encoder.",)


@dataclass
class TrainConfig:
    stage: str = "finetune"  # distill | finetune
    steps: int = 2000
    batch_size: int = 16
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    plateau_factor: float = 0.5
    plateau_patience: int = 2
    plateau_min_delta: float = 1e-4
    lr_min: float = 1e-6
    val_every: int = 200
    seed: int = 0
    # fraction of steps trained with box-only / box+points prompts so every inference mode is seen
    prompt_dropout: float = 0.3

    def __post_init__(self):
        if self.stage not in ("distill", "finetune"):
            raise ContractError(f"unknown stage {self.stage!r}")
        if not self.lr > 0:
            raise ContractError("lr must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ContractError("batch_size must be >= 1 and steps >= 0")

    def adamw(self):
        return AdamWConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, weight_decay=self.weight_decay)

    def plateau(self):
        return PlateauConfig(self.plateau_factor, self.plateau_patience, self.plateau_min_delta, self.lr_min)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    losses: List[float] = field(default_factory=list)
    val_history: List[Dict[str, float]] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)
    flips: List[tuple] = field(default_factory=list)
    best_val: float = math.inf
    best_params: Optional[Dict[str, np.ndarray]] = None


def step_rng(seed: int, step: int):
    return np.random.default_rng([seed, step])


def _check_finite(value, what, step):
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what} at step {step}")


# -- sampling ---------------------------------------------------------------------

def mask_to_input(mask, prepared):
    """Map a gt mask into padded model space (bilinear resize, 0.5 threshold)."""
    s = prepared.image.shape[-1]
    rh, rw = prepared.resized_size
    m = resize_bilinear_np(mask.astype(np.float32), (rh, rw)) > 0.5
    out = np.zeros((s, s), dtype=np.uint8)
    out[:rh, :rw] = m
    return out


def sample_training_example(case: CaseRecord, rng, img_size: int):
    """(image (3,S,S), gt (S,S), box (4,), flip flags) for one random box of one case."""
    n_boxes = len(case.boxes)
    if n_boxes == 0 or case.gts is None:
        raise DataError(f"{case.case_id or 'case'}: training needs boxes and gts")
    k = int(rng.integers(n_boxes))
    gt = gt_for_box(case, k)
    if case.is_3d:
        z, img = sample_slice(case.image, rng, gt)
        gt = gt[z]
    else:
        img = case.image
    box = case.boxes[k]
    prepared = prepare_image(img, box[None], img_size)
    gt_s = mask_to_input(gt, prepared)
    image, gt_s, boxes, flags = random_flip(prepared.image, gt_s, prepared.boxes, rng, return_flags=True)
    return image, gt_s, boxes[0], flags


def _prompt_batch(images, boxes, mode, prompt_mode, rng):
    if mode == "box":
        return None, None
    sets = [make_prompts(b, img.max(axis=0), prompt_mode, rng) for img, b in zip(images, boxes)]
    points = np.stack([p.points for p in sets])
    scribbles = np.stack([p.scribble_mask for p in sets]) if mode == "box+points+scribble" else None
    return points, scribbles


# -- fine-tuning ------------------------------------------------------------------

def finetune_stage(model: SegModel, dataset: Sequence[CaseRecord], cfg: TrainConfig,
                   val_set: Optional[Sequence[CaseRecord]] = None, start_step: int = 0,
                   checkpoint_path=None) -> TrainResult:
    """Train every trainable parameter on Dice + BCE + IoU-MSE."""
    if len(dataset) == 0:
        raise ContractError("empty training dataset")
    params = model.trainable()
    opt = AdamW(params, cfg.adamw())
    plateau = PlateauState()
    res = TrainResult()
    dtype = next(iter(params.values())).dtype
    s = model.cfg.img_size
    model.train()
    for step in range(start_step, cfg.steps):
        rng = step_rng(cfg.seed, step)
        batch = []
        while len(batch) < cfg.batch_size:
            case = dataset[int(rng.integers(len(dataset)))]
            try:
                batch.append(sample_training_example(case, rng, s))
            except SamplingError:
                logger.warning("%s: no foreground slice for sampled box, redrawing", case.case_id)
        images = np.stack([b[0] for b in batch]).astype(dtype)
        gts = np.stack([b[1] for b in batch])
        boxes = np.stack([b[2] for b in batch])
        res.flips.extend(b[3] for b in batch)
        mode = MODES[-1]
        if rng.random() < cfg.prompt_dropout:
            mode = MODES[int(rng.integers(2))]
        points, scribbles = _prompt_batch(images, boxes, mode, "train", rng)
        opt.zero_grad()
        out = model(Tensor(images), boxes, points, scribbles)
        loss, parts = total_loss(out.mask_logits, gts, out.iou_pred)
        _check_finite(parts.total, "training loss", step)
        loss.backward()
        opt.step()
        res.losses.append(parts.total)
        res.lrs.append(opt.lr)
        if val_set and ((step + 1) % cfg.val_every == 0 or step + 1 == cfg.steps):
            score = validate(model, val_set, seed=cfg.seed)
            model.train()
            res.val_history.append({"step": step + 1, "dsc": score, "lr": opt.lr})
            logger.info("step %d loss %.4f val dsc %.4f", step + 1, parts.total, score)
            val_loss = 1.0 - score
            opt.lr = lr_on_plateau(val_loss, opt.lr, plateau, cfg.plateau())
            if val_loss < res.best_val:
                res.best_val = val_loss
                res.best_params = {n: t.data.copy() for n, t in model.params.items()}
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model, {"train_config": cfg.to_json()})
    if checkpoint_path is not None and not val_set:
        save_checkpoint(checkpoint_path, model, {"train_config": cfg.to_json()})
    model.eval()
    return res


def validate(model: SegModel, cases: Sequence[CaseRecord], seed: int = 0,
             mode: str = "box+points+scribble") -> float:
    """Mean DSC over every box of every 2-D case with infer-mode prompts."""
    scores = []
    for i, case in enumerate(cases):
        rng = np.random.default_rng([seed, i])
        masks = predict_image(model, case.image, case.boxes, mode, rng)
        for k, m in enumerate(masks):
            scores.append(dsc(m, gt_for_box(case, k)))
    return float(np.mean(scores))


# -- distillation -----------------------------------------------------------------

def teacher_embeddings(teacher: SegModel, cases: Sequence[CaseRecord]) -> Dict[str, np.ndarray]:
    """Pre-computed embeddings of a frozen network, keyed by case id."""
    store = {}
    teacher.eval()
    dtype = next(iter(teacher.params.values())).dtype
    with no_grad():
        for case in cases:
            img = case.image if not case.is_3d else case.image[case.image.shape[0] // 2]
            prepared = prepare_image(img, np.zeros((0, 4)), teacher.cfg.img_size)
            emb = teacher.encode_image(Tensor(prepared.image[None].astype(dtype))).embedding
            store[case.case_id] = emb.data[0].copy()
    return store


def distill_stage(model: SegModel, teacher_store: Dict[str, np.ndarray], cases: Sequence[CaseRecord],
                  cfg: TrainConfig, start_step: int = 0, checkpoint_path=None) -> TrainResult:
    """Fit the image encoder (stages and neck) to stored teacher embeddings under L1."""
    if len(cases) == 0:
        raise ContractError("empty distillation dataset")
    for case in cases:
        if case.case_id not in teacher_store:
            raise DataError(f"no teacher embedding for case {case.case_id!r}")
    params = model.trainable(ENCODER_PREFIXES)
    opt = AdamW(params, cfg.adamw())
    res = TrainResult()
    dtype = next(iter(params.values())).dtype
    prepared = {}
    model.train()
    for step in range(start_step, cfg.steps):
        rng = step_rng(cfg.seed, step)
        picks = [cases[int(rng.integers(len(cases)))] for _ in range(cfg.batch_size)]
        images, targets = [], []
        for case in picks:
            if case.case_id not in prepared:
                img = case.image if not case.is_3d else case.image[case.image.shape[0] // 2]
                prepared[case.case_id] = prepare_image(img, np.zeros((0, 4)), model.cfg.img_size).image
            images.append(prepared[case.case_id])
            targets.append(teacher_store[case.case_id])
        opt.zero_grad()
        emb = model.encode_image(Tensor(np.stack(images).astype(dtype))).embedding
        loss = distill_loss(emb, np.stack(targets))
        value = float(loss.data)
        _check_finite(value, "distillation loss", step)
        loss.backward()
        opt.step()
        res.losses.append(value)
        res.lrs.append(opt.lr)
        if value < res.best_val:
            res.best_val = value
    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, {"train_config": cfg.to_json()})
    return res
