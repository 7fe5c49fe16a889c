"""Architecture hyperparameters."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Tuple

from .errors import ContractError


@dataclass(frozen=True)
class ModelConfig:
    img_size: int = 256
    stem_dim: int = 32
    stage_dims: Tuple[int, int, int, int] = (64, 128, 256, 448)
    depths: Tuple[int, int, int, int] = (2, 2, 6, 2)
    num_heads: Tuple[int, int, int, int] = (2, 4, 8, 14)
    window_size: int = 8
    mlp_ratio: int = 4
    embed_dim_out: int = 256
    # mask decoder
    decoder_depth: int = 2
    decoder_heads: int = 8
    decoder_mlp_dim: int = 2048
    attn_downsample: int = 2
    fuse_dim: int = 2048
    upscale_dims: Tuple[int, int] = (64, 32)
    iou_hidden: int = 256
    dense_dims: Tuple[int, int] = (4, 16)
    toy: bool = False

    def __post_init__(self):
        for name in ("stage_dims", "depths", "num_heads", "upscale_dims", "dense_dims"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self):
        if len(self.stage_dims) != 4 or len(self.depths) != 4 or len(self.num_heads) != 4:
            raise ContractError("stage_dims, depths and num_heads need exactly 4 entries")
        for d, h in zip(self.stage_dims, self.num_heads):
            if d % h:
                raise ContractError(f"stage dim {d} not divisible by {h} heads")
        if self.img_size % 16:
            raise ContractError(f"img_size {self.img_size} must be a multiple of 16")
        inner = self.embed_dim_out // self.attn_downsample
        if self.embed_dim_out % 2 or inner % self.decoder_heads or self.embed_dim_out % self.decoder_heads:
            raise ContractError("embed_dim_out incompatible with decoder heads/downsample")

    # resolutions of the four stages: img/4, img/8, img/16, img/16
    @property
    def stage_resolutions(self):
        s = self.img_size
        return (s // 4, s // 8, s // 16, s // 16)

    @property
    def embed_grid(self):
        return self.img_size // 16

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def full_config():
    return ModelConfig()


def toy_config():
    return ModelConfig(
        img_size=64,
        stem_dim=8,
        stage_dims=(8, 16, 16, 32),
        depths=(1, 1, 2, 1),
        num_heads=(1, 2, 2, 4),
        window_size=8,
        embed_dim_out=32,
        decoder_depth=2,
        decoder_heads=2,
        decoder_mlp_dim=64,
        fuse_dim=32,
        upscale_dims=(16, 8),
        iou_hidden=32,
        dense_dims=(4, 8),
        toy=True,
    )
