"""Mask decoder: two-way transformer, skip fusion from the encoder, upscaling head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .encoder import EncoderOutput, layer_norm_2d
from .params import ParamSpec, conv_specs, linear_specs, norm_specs
from .promptenc import dense_positional_encoding
from .tensor import Tensor

PREFIX = "mask_decoder"


@dataclass
class DecoderOutput:
    mask_logits: Tensor  # (B, 1, S, S)
    iou_pred: Tensor  # (B,)


def _attn_specs(prefix, dim, inner):
    specs = {}
    for name in ("q_proj", "k_proj", "v_proj"):
        specs.update(linear_specs(f"{prefix}.{name}", dim, inner))
    specs.update(linear_specs(f"{prefix}.out_proj", inner, dim))
    return specs


def _mlp_specs(prefix, dims):
    specs = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        specs.update(linear_specs(f"{prefix}.layer{i}", a, b))
    return specs


def param_specs(cfg: ModelConfig) -> Dict[str, ParamSpec]:
    p, d = PREFIX, cfg.embed_dim_out
    inner = d // cfg.attn_downsample
    specs = {}
    for i in range(cfg.decoder_depth):
        lp = f"{p}.transformer.layer{i}"
        specs.update(_attn_specs(f"{lp}.self_attn", d, d))
        specs.update(norm_specs(f"{lp}.norm1", d))
        specs.update(_attn_specs(f"{lp}.cross_token_to_image", d, inner))
        specs.update(norm_specs(f"{lp}.norm2", d))
        specs.update(_mlp_specs(f"{lp}.mlp", (d, cfg.decoder_mlp_dim, d)))
        specs.update(norm_specs(f"{lp}.norm3", d))
        specs.update(_attn_specs(f"{lp}.cross_image_to_token", d, inner))
        specs.update(norm_specs(f"{lp}.norm4", d))
    specs.update(_attn_specs(f"{p}.transformer.final_attn", d, inner))
    specs.update(norm_specs(f"{p}.transformer.norm_final", d))
    specs[f"{p}.iou_token.weight"] = ParamSpec((d,), "normal")
    specs[f"{p}.mask_token.weight"] = ParamSpec((d,), "normal")

    c1, c2, c3, c4 = cfg.stage_dims
    specs.update(conv_specs(f"{p}.fuse.conv1", c2 + c3 + c4, cfg.fuse_dim, 3))
    specs.update(conv_specs(f"{p}.fuse.conv2", cfg.fuse_dim, d, 3))

    u0, u1 = cfg.upscale_dims
    specs[f"{p}.upscale1.weight"] = ParamSpec((d, u0, 2, 2))
    specs[f"{p}.upscale1.bias"] = ParamSpec((u0,), "zeros")
    specs.update(norm_specs(f"{p}.upscale1_norm", u0))
    specs[f"{p}.upscale2.weight"] = ParamSpec((u0, u1, 2, 2))
    specs[f"{p}.upscale2.bias"] = ParamSpec((u1,), "zeros")
    specs.update(conv_specs(f"{p}.skip1.conv", u1 + c1, u1, 3))
    specs.update(_mlp_specs(f"{p}.hyper", (d, d, d, u1)))
    specs.update(_mlp_specs(f"{p}.iou_head", (d, cfg.iou_hidden, cfg.iou_hidden, 1)))
    return specs


def _mlp(x: Tensor, P, prefix, n_layers, act=T.relu) -> Tensor:
    for i in range(n_layers):
        x = T.linear(x, P[f"{prefix}.layer{i}.weight"], P[f"{prefix}.layer{i}.bias"])
        if i < n_layers - 1:
            x = act(x)
    return x


def attention(q: Tensor, k: Tensor, v: Tensor, P, prefix: str, heads: int) -> Tensor:
    """Multi-head attention with (possibly narrower) internal projections; (B, N, D) inputs."""
    q = T.linear(q, P[f"{prefix}.q_proj.weight"], P[f"{prefix}.q_proj.bias"])
    k = T.linear(k, P[f"{prefix}.k_proj.weight"], P[f"{prefix}.k_proj.bias"])
    v = T.linear(v, P[f"{prefix}.v_proj.weight"], P[f"{prefix}.v_proj.bias"])
    b, nq, inner = q.shape
    nk = k.shape[1]
    hd = inner // heads
    q = T.transpose(T.reshape(q, (b, nq, heads, hd)), (0, 2, 1, 3))
    k = T.transpose(T.reshape(k, (b, nk, heads, hd)), (0, 2, 3, 1))
    v = T.transpose(T.reshape(v, (b, nk, heads, hd)), (0, 2, 1, 3))
    attn = T.softmax(T.matmul(q, k) * (hd ** -0.5), axis=-1)
    out = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, nq, inner))
    return T.linear(out, P[f"{prefix}.out_proj.weight"], P[f"{prefix}.out_proj.bias"])


def _ln(x, P, prefix):
    return T.layer_norm(x, P[f"{prefix}.weight"], P[f"{prefix}.bias"])


def two_way_transformer(img_emb: Tensor, img_pe: np.ndarray, tokens: Tensor, P, cfg: ModelConfig):
    """Alternate token->image and image->token attention.

    ``img_emb`` is (B, D, h, w) with the dense prompt already added, ``tokens`` is
    (B, M, D). Returns updated tokens and the image embedding back in (B, D, h, w).
    """
    b, d, h, w = img_emb.shape
    keys = T.transpose(T.reshape(img_emb, (b, d, h * w)), (0, 2, 1))
    key_pe = Tensor(img_pe.reshape(d, h * w).T[None].astype(keys.dtype))
    queries, query_pe = tokens, tokens
    heads = cfg.decoder_heads
    for i in range(cfg.decoder_depth):
        lp = f"{PREFIX}.transformer.layer{i}"
        if i == 0:
            queries = attention(queries, queries, queries, P, f"{lp}.self_attn", heads)
        else:
            q = queries + query_pe
            queries = queries + attention(q, q, queries, P, f"{lp}.self_attn", heads)
        queries = _ln(queries, P, f"{lp}.norm1")
        q, k = queries + query_pe, keys + key_pe
        queries = _ln(queries + attention(q, k, keys, P, f"{lp}.cross_token_to_image", heads), P, f"{lp}.norm2")
        queries = _ln(queries + _mlp(queries, P, f"{lp}.mlp", 2), P, f"{lp}.norm3")
        q, k = queries + query_pe, keys + key_pe
        keys = _ln(keys + attention(k, q, queries, P, f"{lp}.cross_image_to_token", heads), P, f"{lp}.norm4")
    q, k = queries + query_pe, keys + key_pe
    queries = queries + attention(q, k, keys, P, f"{PREFIX}.transformer.final_attn", heads)
    queries = _ln(queries, P, f"{PREFIX}.transformer.norm_final")
    img_out = T.reshape(T.transpose(keys, (0, 2, 1)), (b, d, h, w))
    return queries, img_out


def fuse_skips(s2: Tensor, s3: Tensor, s4: Tensor, P) -> Tensor:
    """Downsample s2 to the embedding grid, concat with s3 and s4, two 3x3 convs."""
    grid = s3.shape[-2:]
    x = T.concat([T.interpolate(s2, grid), s3, s4], axis=1)
    x = T.gelu(T.conv2d(x, P[f"{PREFIX}.fuse.conv1.weight"], P[f"{PREFIX}.fuse.conv1.bias"], pad=1))
    return T.conv2d(x, P[f"{PREFIX}.fuse.conv2.weight"], P[f"{PREFIX}.fuse.conv2.bias"], pad=1)


def decode_masks(enc: EncoderOutput, sparse: Tensor, dense: Tensor, P, cfg: ModelConfig,
                 zero_hypernetwork: bool = False) -> DecoderOutput:
    """Predict mask logits at input resolution plus an IoU estimate.

    ``sparse`` is (B, N, D) and ``dense`` is (B, D, h, w). ``zero_hypernetwork``
    replaces the mask-token hypernetwork output with zeros (ablation hook).
    """
    p = PREFIX
    emb = enc.embedding
    b, d, g, _ = emb.shape
    special = T.concat([T.reshape(P[f"{p}.iou_token.weight"], (1, 1, d)),
                        T.reshape(P[f"{p}.mask_token.weight"], (1, 1, d))], axis=1)
    special = special + Tensor(np.zeros((b, 1, 1), dtype=emb.dtype))
    tokens = T.concat([special, sparse], axis=1)
    img_pe = dense_positional_encoding(P, g)
    queries, img_out = two_way_transformer(emb + dense, img_pe, tokens, P, cfg)

    x = img_out + fuse_skips(enc.s2, enc.s3, enc.s4, P)
    x = T.conv_transpose2x2(x, P[f"{p}.upscale1.weight"], P[f"{p}.upscale1.bias"])
    x = T.gelu(layer_norm_2d(x, P, f"{p}.upscale1_norm"))
    x = T.gelu(T.conv_transpose2x2(x, P[f"{p}.upscale2.weight"], P[f"{p}.upscale2.bias"]))
    x = T.concat([x, enc.s1], axis=1)
    x = T.gelu(T.conv2d(x, P[f"{p}.skip1.conv.weight"], P[f"{p}.skip1.conv.bias"], pad=1))

    hyper = _mlp(queries[:, 1, :], P, f"{p}.hyper", 3)  # (B, u1)
    if zero_hypernetwork:
        hyper = hyper * 0.0
    bb, c, hh, ww = x.shape
    # dot product and bilinear upsampling are both linear, so upsample the 1-channel result
    low = T.matmul(T.reshape(hyper, (b, 1, c)), T.reshape(x, (b, c, hh * ww)))
    logits = T.interpolate(T.reshape(low, (b, 1, hh, ww)), (cfg.img_size, cfg.img_size))
    iou = T.sigmoid(T.reshape(_mlp(queries[:, 0, :], P, f"{p}.iou_head", 3), (b,)))
    return DecoderOutput(logits, iou)
