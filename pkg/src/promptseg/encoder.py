"""Image encoder: conv stem, four stages of Swin blocks with a ConvBN insert, neck.

Feature maps travel channels-last ``(B, H, W, C)`` inside the stages; the
returned stage outputs and embedding are channels-first ``(B, C, H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import CheckpointError, DimensionError
from .params import ParamSpec, conv_specs, linear_specs, norm_specs
from .tensor import Tensor

PREFIX = "image_encoder"


@dataclass
class EncoderOutput:
    s1: Tensor
    s2: Tensor
    s3: Tensor
    s4: Tensor
    embedding: Tensor

    def map(self, fn) -> "EncoderOutput":
        """Apply ``fn`` to every feature map (e.g. slicing or repeating the batch)."""
        return EncoderOutput(fn(self.s1), fn(self.s2), fn(self.s3), fn(self.s4), fn(self.embedding))


def stage_window(cfg: ModelConfig, stage: int) -> int:
    """Effective window size for stage ``stage`` (0-based); clamped to the feature map."""
    return min(cfg.window_size, cfg.stage_resolutions[stage])


def block_specs(prefix, dim, heads, win, mlp_ratio):
    hidden = dim * mlp_ratio
    specs = {}
    specs.update(norm_specs(f"{prefix}.norm1", dim))
    specs.update(linear_specs(f"{prefix}.attn.qkv", dim, 3 * dim))
    specs.update(linear_specs(f"{prefix}.attn.proj", dim, dim))
    specs[f"{prefix}.attn.rel_bias.weight"] = ParamSpec(((2 * win - 1) ** 2, heads))
    specs[f"{prefix}.conv.weight"] = ParamSpec((dim, 1, 3, 3))
    specs.update(norm_specs(f"{prefix}.bn", dim))
    specs.update(norm_specs(f"{prefix}.norm2", dim))
    specs.update(linear_specs(f"{prefix}.mlp.fc1", dim, hidden))
    specs.update(linear_specs(f"{prefix}.mlp.fc2", hidden, dim))
    return specs


def param_specs(cfg: ModelConfig) -> Dict[str, ParamSpec]:
    p = PREFIX
    dims = cfg.stage_dims
    specs = {}
    specs.update(conv_specs(f"{p}.stem.conv1", 3, cfg.stem_dim, 3))
    specs.update(conv_specs(f"{p}.stem.conv2", cfg.stem_dim, dims[0], 3))
    for i in range(4):
        win = stage_window(cfg, i)
        for j in range(cfg.depths[i]):
            specs.update(block_specs(f"{p}.stage{i + 1}.block{j}", dims[i], cfg.num_heads[i],
                                     win, cfg.mlp_ratio))
        if i < 2:
            specs.update(norm_specs(f"{p}.stage{i + 1}.downsample.norm", 4 * dims[i]))
            specs.update(linear_specs(f"{p}.stage{i + 1}.downsample.reduction", 4 * dims[i],
                                      dims[i + 1], bias=False))
        elif i == 2:
            specs.update(norm_specs(f"{p}.stage3.project.norm", dims[2]))
            specs.update(linear_specs(f"{p}.stage3.project.reduction", dims[2], dims[3], bias=False))
    e = cfg.embed_dim_out
    specs.update(conv_specs(f"{p}.neck.conv1", dims[3], e, 1, bias=False))
    specs.update(norm_specs(f"{p}.neck.norm1", e))
    specs.update(conv_specs(f"{p}.neck.conv2", e, e, 3, bias=False))
    specs.update(norm_specs(f"{p}.neck.norm2", e))
    return specs


def buffer_specs(cfg: ModelConfig) -> Dict[str, ParamSpec]:
    specs = {}
    for i in range(4):
        for j in range(cfg.depths[i]):
            b = f"{PREFIX}.stage{i + 1}.block{j}.bn"
            specs[f"{b}.running_mean"] = ParamSpec((cfg.stage_dims[i],), "zeros", trainable=False)
            specs[f"{b}.running_var"] = ParamSpec((cfg.stage_dims[i],), "ones", trainable=False)
    return specs


# -- attention helpers ---------------------------------------------------------

@lru_cache(maxsize=None)
def relative_position_index(win: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(win), np.arange(win), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel.transpose(1, 2, 0) + (win - 1)
    return rel[..., 0] * (2 * win - 1) + rel[..., 1]


@lru_cache(maxsize=None)
def shifted_window_mask(h: int, w: int, win: int, shift: int) -> np.ndarray:
    """(num_windows, L, L) additive mask keeping attention inside shifted regions."""
    region = np.zeros((h, w), dtype=np.int64)
    label = 0
    cuts = (slice(0, -win), slice(-win, -shift), slice(-shift, None))
    for hs in cuts:
        for ws in cuts:
            region[hs, ws] = label
            label += 1
    wins = region.reshape(h // win, win, w // win, win).transpose(0, 2, 1, 3).reshape(-1, win * win)
    diff = wins[:, :, None] != wins[:, None, :]
    return np.where(diff, -100.0, 0.0).astype(np.float32)


def window_attention(x: Tensor, P: Dict[str, Tensor], prefix: str, heads: int, win: int,
                     mask=None, batch: int = 1) -> Tensor:
    """Multi-head self-attention inside each window; ``x`` is (num_windows*B, L, C)."""
    n, length, c = x.shape
    hd = c // heads
    qkv = T.linear(x, P[f"{prefix}.qkv.weight"], P[f"{prefix}.qkv.bias"])
    qkv = T.transpose(T.reshape(qkv, (n, length, 3, heads, hd)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    attn = T.matmul(q * (hd ** -0.5), T.transpose(k, (0, 1, 3, 2)))
    table = P[f"{prefix}.rel_bias.weight"]
    bias = T.reshape(table[relative_position_index(win).reshape(-1)], (length, length, heads))
    attn = attn + T.transpose(bias, (2, 0, 1))
    if mask is not None:
        nw = mask.shape[0]
        attn = T.reshape(attn, (batch, nw, heads, length, length)) + mask.astype(x.dtype)[None, :, None]
        attn = T.reshape(attn, (n, heads, length, length))
    attn = T.softmax(attn, axis=-1)
    out = T.transpose(T.matmul(attn, v), (0, 2, 1, 3))
    return T.linear(T.reshape(out, (n, length, c)), P[f"{prefix}.proj.weight"], P[f"{prefix}.proj.bias"])


def swin_block_forward(x: Tensor, P: Dict[str, Tensor], prefix: str, heads: int, window: int,
                       shifted: bool, buffers: Dict[str, np.ndarray], training: bool = False) -> Tensor:
    """One modified Swin block on a channels-last map ``(B, H, W, C)``.

    x1 = x + W-MSA(LN(x)); x2 = x1 + BN(dwconv3x3(x1)); out = x2 + MLP(LN(x2)).
    """
    b, h, w, c = x.shape
    win = min(window, h, w)
    shift = win // 2 if shifted and min(h, w) > window else 0
    y = T.layer_norm(x, P[f"{prefix}.norm1.weight"], P[f"{prefix}.norm1.bias"])
    ph, pw = (-h) % win, (-w) % win
    if ph or pw:
        y = T.pad(y, ((0, 0), (0, ph), (0, pw), (0, 0)))
    hp, wp = h + ph, w + pw
    mask = None
    if shift:
        y = T.roll(y, (-shift, -shift), (1, 2))
        mask = shifted_window_mask(hp, wp, win, shift)
    wins = T.reshape(T.window_partition(y, win), (-1, win * win, c))
    wins = window_attention(wins, P, f"{prefix}.attn", heads, win, mask, batch=b)
    y = T.window_reverse(T.reshape(wins, (-1, win, win, c)), win, hp, wp, batch=b)
    if shift:
        y = T.roll(y, (shift, shift), (1, 2))
    if ph or pw:
        y = y[:, :h, :w, :]
    x = x + y

    y = T.depthwise_conv2d(x, P[f"{prefix}.conv.weight"])
    y = T.batch_norm(y, P[f"{prefix}.bn.weight"], P[f"{prefix}.bn.bias"],
                     buffers[f"{prefix}.bn.running_mean"], buffers[f"{prefix}.bn.running_var"],
                     training, axis=-1)
    x = x + y

    y = T.layer_norm(x, P[f"{prefix}.norm2.weight"], P[f"{prefix}.norm2.bias"])
    y = T.gelu(T.linear(y, P[f"{prefix}.mlp.fc1.weight"], P[f"{prefix}.mlp.fc1.bias"]))
    y = T.linear(y, P[f"{prefix}.mlp.fc2.weight"], P[f"{prefix}.mlp.fc2.bias"])
    return x + y


def patch_merge(x: Tensor, P, prefix) -> Tensor:
    """2x2 neighbourhood concat + LN + linear; (B, H, W, C) -> (B, H/2, W/2, C')."""
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        x = T.pad(x, ((0, 0), (0, h % 2), (0, w % 2), (0, 0)))
        h, w = h + h % 2, w + w % 2
    y = T.reshape(x, (b, h // 2, 2, w // 2, 2, c))
    # channel order (row0,col0), (row1,col0), (row0,col1), (row1,col1)
    y = T.reshape(T.transpose(y, (0, 1, 3, 4, 2, 5)), (b, h // 2, w // 2, 4 * c))
    y = T.layer_norm(y, P[f"{prefix}.norm.weight"], P[f"{prefix}.norm.bias"])
    return T.linear(y, P[f"{prefix}.reduction.weight"])


def stem_forward(img: Tensor, P: Dict[str, Tensor]) -> Tensor:
    """(B, 3, S, S) or (3, S, S) -> channels-first stem features at stride 4."""
    if img.ndim not in (3, 4) or img.shape[-3] != 3:
        raise DimensionError(f"stem expects a 3-channel image, got shape {img.shape}")
    p = f"{PREFIX}.stem"
    y = T.conv2d(img, P[f"{p}.conv1.weight"], P[f"{p}.conv1.bias"], stride=2, pad=1)
    y = T.gelu(y)
    return T.conv2d(y, P[f"{p}.conv2.weight"], P[f"{p}.conv2.bias"], stride=2, pad=1)


def layer_norm_2d(x: Tensor, P, prefix) -> Tensor:
    """LayerNorm over channels of a channels-first map."""
    y = T.transpose(x, (0, 2, 3, 1))
    y = T.layer_norm(y, P[f"{prefix}.weight"], P[f"{prefix}.bias"])
    return T.transpose(y, (0, 3, 1, 2))


def neck_forward(s4: Tensor, P: Dict[str, Tensor]) -> Tensor:
    """(B, C4, h, w) -> (B, embed_dim_out, h, w): 1x1 conv, LN, 3x3 conv, LN."""
    p = f"{PREFIX}.neck"
    y = T.conv2d(s4, P[f"{p}.conv1.weight"])
    y = layer_norm_2d(y, P, f"{p}.norm1")
    y = T.conv2d(y, P[f"{p}.conv2.weight"], pad=1)
    return layer_norm_2d(y, P, f"{p}.norm2")


def check_params(P, specs):
    missing = sorted(set(specs) - set(P))
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise CheckpointError(f"missing {len(missing)} parameters: {shown}")
    for name, spec in specs.items():
        if tuple(P[name].shape) != spec.shape:
            raise CheckpointError(f"parameter {name} has shape {P[name].shape}, expected {spec.shape}")


def encoder_forward(img: Tensor, P: Dict[str, Tensor], cfg: ModelConfig,
                    buffers: Dict[str, np.ndarray], training: bool = False) -> EncoderOutput:
    batched = img.ndim == 4
    if not batched:
        img = T.reshape(img, (1,) + img.shape)
    if img.shape[1:] != (3, cfg.img_size, cfg.img_size):
        raise DimensionError(f"encoder expects (3, {cfg.img_size}, {cfg.img_size}) input, got {img.shape[1:]}")
    x = T.transpose(stem_forward(img, P), (0, 2, 3, 1))
    outs = []
    for i in range(4):
        for j in range(cfg.depths[i]):
            x = swin_block_forward(x, P, f"{PREFIX}.stage{i + 1}.block{j}", cfg.num_heads[i],
                                   cfg.window_size, shifted=j % 2 == 1, buffers=buffers,
                                   training=training)
        outs.append(T.transpose(x, (0, 3, 1, 2)))
        if i < 2:
            x = patch_merge(x, P, f"{PREFIX}.stage{i + 1}.downsample")
        elif i == 2:
            x = T.layer_norm(x, P[f"{PREFIX}.stage3.project.norm.weight"],
                             P[f"{PREFIX}.stage3.project.norm.bias"])
            x = T.linear(x, P[f"{PREFIX}.stage3.project.reduction.weight"])
    emb = neck_forward(outs[3], P)
    return EncoderOutput(*outs, embedding=emb)
