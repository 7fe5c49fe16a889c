"""Parameter declarations and initialization.

Every component declares its parameters as ``name -> ParamSpec``; the same
declaration drives initialization, checkpoint validation and parameter
counting, so the three can never disagree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class ParamSpec:
    shape: Tuple[int, ...]
    init: str = "trunc_normal"  # trunc_normal | zeros | ones | normal
    trainable: bool = True

    @property
    def size(self):
        return int(np.prod(self.shape)) if self.shape else 1


def linear_specs(prefix, d_in, d_out, bias=True):
    out = {f"{prefix}.weight": ParamSpec((d_out, d_in))}
    if bias:
        out[f"{prefix}.bias"] = ParamSpec((d_out,), "zeros")
    return out


def conv_specs(prefix, c_in, c_out, k, bias=True):
    out = {f"{prefix}.weight": ParamSpec((c_out, c_in, k, k))}
    if bias:
        out[f"{prefix}.bias"] = ParamSpec((c_out,), "zeros")
    return out


def norm_specs(prefix, dim):
    return {f"{prefix}.weight": ParamSpec((dim,), "ones"), f"{prefix}.bias": ParamSpec((dim,), "zeros")}


def trunc_normal(rng, shape, std=0.02, bound=2.0):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def init_array(spec: ParamSpec, rng, dtype=np.float32):
    if spec.init == "zeros":
        arr = np.zeros(spec.shape)
    elif spec.init == "ones":
        arr = np.ones(spec.shape)
    elif spec.init == "normal":
        arr = rng.standard_normal(spec.shape)
    else:
        arr = trunc_normal(rng, spec.shape)
    return arr.astype(dtype)


def init_params(specs: Dict[str, ParamSpec], rng) -> Dict[str, Tensor]:
    """Initialize in sorted-name order so the result depends only on the seed."""
    return {
        name: Tensor(init_array(specs[name], rng), requires_grad=specs[name].trainable)
        for name in sorted(specs)
    }
