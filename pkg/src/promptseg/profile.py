"""Parameter and FLOP accounting.

Parameters are counted by enumerating the declared parameter shapes. FLOPs are
2 * multiply-accumulates of every convolution and matmul in one forward pass
at ``img_size`` with a box, four points and a scribble (the most expensive
prompt mode). Interpolation, normalization and activations are not counted.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import decoder, encoder, promptenc
from .config import ModelConfig

# reported budgets: encoder / full model
BUDGET_PARAMS = (10.51e6, 36.77e6)
BUDGET_FLOPS = (47.70e9, 55.20e9)


@dataclass
class Profile:
    encoder_params: int
    prompt_encoder_params: int
    decoder_params: int
    encoder_flops: int
    prompt_flops: int
    decoder_flops: int

    @property
    def params(self):
        return self.encoder_params + self.prompt_encoder_params + self.decoder_params

    @property
    def flops(self):
        return self.encoder_flops + self.prompt_flops + self.decoder_flops

    def report(self):
        rows = [
            ("encoder params", self.encoder_params, BUDGET_PARAMS[0]),
            ("model params", self.params, BUDGET_PARAMS[1]),
            ("encoder FLOPs", self.encoder_flops, BUDGET_FLOPS[0]),
            ("model FLOPs", self.flops, BUDGET_FLOPS[1]),
        ]
        lines = []
        for label, value, budget in rows:
            lines.append(f"{label:>15}: {value / 1e6:12.2f}M  (reported {budget / 1e6:.2f}M, "
                         f"ratio {value / budget:.3f})")
        return "\n".join(lines)


def count_params(specs):
    return sum(s.size for s in specs.values())


def encoder_macs(cfg: ModelConfig) -> int:
    s = cfg.img_size
    c = cfg.stage_dims
    macs = (s // 2) ** 2 * cfg.stem_dim * 3 * 9
    macs += (s // 4) ** 2 * c[0] * cfg.stem_dim * 9
    for i, res in enumerate(cfg.stage_resolutions):
        dim, n = c[i], res * res
        win = min(cfg.window_size, res)
        padded = (-(-res // win) * win) ** 2
        length = win * win
        block = (
            padded * dim * 3 * dim  # qkv
            + 2 * padded * length * dim  # q k^T and attn v
            + padded * dim * dim  # proj
            + n * dim * 9  # depthwise conv
            + 2 * n * dim * dim * cfg.mlp_ratio  # mlp
        )
        macs += cfg.depths[i] * block
        if i < 2:
            macs += (n // 4) * 4 * dim * c[i + 1]
        elif i == 2:
            macs += n * dim * c[3]
    g2 = cfg.embed_grid ** 2
    e = cfg.embed_dim_out
    macs += g2 * c[3] * e + g2 * e * e * 9
    return macs


def prompt_macs(cfg: ModelConfig) -> int:
    s, d0, d1 = cfg.img_size, *cfg.dense_dims
    return (s // 2) ** 2 * 4 * d0 + (s // 4) ** 2 * 4 * d0 * d1 + cfg.embed_grid ** 2 * d1 * cfg.embed_dim_out


def decoder_macs(cfg: ModelConfig, n_sparse: int = 6) -> int:
    d = cfg.embed_dim_out
    di = d // cfg.attn_downsample
    m = n_sparse + 2
    g = cfg.embed_grid
    n = g * g

    def cross(nq, nk):
        return nq * d * di + 2 * nk * d * di + nq * di * d + 2 * nq * nk * di

    layer = 4 * m * d * d + 2 * m * m * d + cross(m, n) + 2 * m * d * cfg.decoder_mlp_dim + cross(n, m)
    macs = cfg.decoder_depth * layer + cross(m, n)
    c1, c2, c3, c4 = cfg.stage_dims
    macs += n * (c2 + c3 + c4) * 9 * cfg.fuse_dim + n * cfg.fuse_dim * 9 * d
    u0, u1 = cfg.upscale_dims
    macs += n * d * u0 * 4 + (4 * n) * u0 * u1 * 4
    macs += (16 * n) * (u1 + c1) * 9 * u1
    macs += 2 * d * d + d * u1 + u1 * 16 * n
    macs += d * cfg.iou_hidden + cfg.iou_hidden ** 2 + cfg.iou_hidden
    return macs


def profile_model(cfg: ModelConfig) -> Profile:
    return Profile(
        encoder_params=count_params(encoder.param_specs(cfg)),
        prompt_encoder_params=count_params(promptenc.param_specs(cfg)),
        decoder_params=count_params(decoder.param_specs(cfg)),
        encoder_flops=2 * encoder_macs(cfg),
        prompt_flops=2 * prompt_macs(cfg),
        decoder_flops=2 * decoder_macs(cfg),
    )
