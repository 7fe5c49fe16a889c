"""Prompt encoder: box corners and points as sparse tokens, scribble mask as a dense grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .encoder import layer_norm_2d
from .errors import ContractError, DimensionError
from .params import ParamSpec, conv_specs, norm_specs
from .tensor import Tensor

PREFIX = "prompt_encoder"

# token type ids
POINT, CORNER_TL, CORNER_BR = 0, 1, 2
_TYPE_NAMES = {POINT: "point", CORNER_TL: "corner_tl", CORNER_BR: "corner_br"}


@dataclass
class SparseEmbedding:
    tokens: Tensor  # (B, N, D)
    labels: np.ndarray  # (N,) token type ids


def param_specs(cfg: ModelConfig) -> Dict[str, ParamSpec]:
    p, d = PREFIX, cfg.embed_dim_out
    d0, d1 = cfg.dense_dims
    specs = {f"{p}.pe.gaussian": ParamSpec((2, d // 2), "normal", trainable=False)}
    for name in _TYPE_NAMES.values():
        specs[f"{p}.type_embed.{name}.weight"] = ParamSpec((d,), "normal")
    specs[f"{p}.no_scribble.weight"] = ParamSpec((d,), "normal")
    specs.update(conv_specs(f"{p}.dense.conv1", 1, d0, 2))
    specs.update(norm_specs(f"{p}.dense.norm1", d0))
    specs.update(conv_specs(f"{p}.dense.conv2", d0, d1, 2))
    specs.update(norm_specs(f"{p}.dense.norm2", d1))
    specs.update(conv_specs(f"{p}.dense.conv3", d1, d, 1))
    return specs


def _fourier(unit_coords: np.ndarray, gaussian: np.ndarray) -> np.ndarray:
    c = 2.0 * unit_coords - 1.0
    c = 2.0 * np.pi * (c @ gaussian)
    return np.concatenate([np.sin(c), np.cos(c)], axis=-1)


def positional_encode(coords, P: Dict[str, Tensor], img_size: int) -> np.ndarray:
    """Random Fourier features of continuous ``(x, y)`` coordinates ``(..., 2)`` in [0, img_size]."""
    gaussian = P[f"{PREFIX}.pe.gaussian"].data
    coords = np.asarray(coords, dtype=np.float64) / img_size
    return _fourier(coords, gaussian).astype(gaussian.dtype)


def dense_positional_encoding(P: Dict[str, Tensor], grid: int) -> np.ndarray:
    """(D, grid, grid) encoding of grid-cell centres."""
    gaussian = P[f"{PREFIX}.pe.gaussian"].data
    centres = (np.arange(grid) + 0.5) / grid
    yy, xx = np.meshgrid(centres, centres, indexing="ij")
    pe = _fourier(np.stack([xx, yy], axis=-1), gaussian)
    return pe.transpose(2, 0, 1).astype(gaussian.dtype)


def encode_sparse(points: Optional[np.ndarray], corners: np.ndarray, P: Dict[str, Tensor],
                  img_size: int) -> SparseEmbedding:
    """Tokens for 0-4 interior points followed by the two box corners.

    ``points`` is (B, n, 2) or (n, 2) or None; ``corners`` is (B, 2, 2) or (2, 2).
    """
    corners = np.asarray(corners, dtype=np.float64)
    batched = corners.ndim == 3
    if not batched:
        corners = corners[None]
    if corners.shape[1:] != (2, 2):
        raise DimensionError(f"corners must be (2, 2) per prompt, got {corners.shape}")
    b = corners.shape[0]
    if points is None:
        points = np.zeros((b, 0, 2))
    else:
        points = np.asarray(points, dtype=np.float64)
        if not batched:
            points = points[None]
    coords = np.concatenate([points, corners], axis=1)
    labels = np.array([POINT] * points.shape[1] + [CORNER_TL, CORNER_BR])
    pe = Tensor(positional_encode(coords, P, img_size))
    types = T.concat([T.reshape(P[f"{PREFIX}.type_embed.{_TYPE_NAMES[int(t)]}.weight"], (1, -1))
                      for t in labels], axis=0)
    tokens = pe + types
    if not batched:
        tokens = T.reshape(tokens, tokens.shape[1:])
    return SparseEmbedding(tokens, labels)


def encode_dense(scribble: np.ndarray, P: Dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Binary scribble mask (B, S, S) or (S, S) -> (B, D, S/16, S/16) dense embedding.

    Samples whose mask is all zero get the learned no-scribble vector at every cell.
    """
    scribble = np.asarray(scribble)
    batched = scribble.ndim == 3
    if not batched:
        scribble = scribble[None]
    s = cfg.img_size
    if scribble.shape[1:] != (s, s):
        raise DimensionError(f"scribble mask must be {s}x{s}, got {scribble.shape[1:]}")
    if not np.isin(scribble, (0, 1)).all():
        raise ContractError("scribble mask must be binary")
    p, d, g = PREFIX, cfg.embed_dim_out, cfg.embed_grid
    b = scribble.shape[0]
    present = scribble.reshape(b, -1).any(axis=1)
    dtype = P[f"{p}.no_scribble.weight"].dtype
    empty = Tensor((~present).astype(dtype).reshape(b, 1, 1, 1))
    out = T.reshape(P[f"{p}.no_scribble.weight"], (1, d, 1, 1)) * empty
    out = out + Tensor(np.zeros((1, 1, g, g), dtype=dtype))
    if present.any():
        x = Tensor(scribble.astype(dtype).reshape(b, 1, s, s))
        y = T.conv2d(x, P[f"{p}.dense.conv1.weight"], P[f"{p}.dense.conv1.bias"], stride=2)
        y = T.gelu(layer_norm_2d(y, P, f"{p}.dense.norm1"))
        y = T.conv2d(y, P[f"{p}.dense.conv2.weight"], P[f"{p}.dense.conv2.bias"], stride=2)
        y = T.gelu(layer_norm_2d(y, P, f"{p}.dense.norm2"))
        c = y.shape[1]
        y = T.mean(T.reshape(y, (b, c, g, 4, g, 4)), axis=(3, 5))
        y = T.conv2d(y, P[f"{p}.dense.conv3.weight"], P[f"{p}.dense.conv3.bias"])
        out = out + y * Tensor(present.astype(dtype).reshape(b, 1, 1, 1))
    if not batched:
        out = T.reshape(out, out.shape[1:])
    return out
