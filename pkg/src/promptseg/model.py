"""Full promptable segmentation model: image encoder, prompt encoder, mask decoder."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from . import decoder, encoder, promptenc
from .config import ModelConfig
from .decoder import DecoderOutput
from .encoder import EncoderOutput
from .params import ParamSpec, init_array, init_params
from .tensor import Tensor


def param_specs(cfg: ModelConfig) -> Dict[str, ParamSpec]:
    specs = {}
    for mod in (encoder, promptenc, decoder):
        specs.update(mod.param_specs(cfg))
    return specs


def buffer_specs(cfg: ModelConfig) -> Dict[str, ParamSpec]:
    return encoder.buffer_specs(cfg)


class SegModel:
    """Parameters, batch-norm buffers and forward passes for one configuration."""

    def __init__(self, cfg: ModelConfig, params: Optional[Dict[str, Tensor]] = None,
                 buffers: Optional[Dict[str, np.ndarray]] = None, seed: int = 0):
        self.cfg = cfg
        self.specs = param_specs(cfg)
        if params is None:
            params = init_params(self.specs, np.random.default_rng(seed))
        encoder.check_params(params, self.specs)
        self.params = params
        if buffers is None:
            buffers = {n: init_array(s, None) for n, s in sorted(buffer_specs(cfg).items())}
        self.buffers = buffers
        self.training = False

    # -- bookkeeping ------------------------------------------------------------
    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def trainable(self, prefixes=None):
        """Trainable parameters, optionally restricted to names starting with ``prefixes``."""
        out = {}
        for name in sorted(self.params):
            if not self.specs[name].trainable:
                continue
            if prefixes is None or name.startswith(tuple(prefixes)):
                out[name] = self.params[name]
        return out

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def to(self, dtype):
        """Cast parameters and buffers in place (e.g. float64 for gradient checks)."""
        for name, t in self.params.items():
            self.params[name] = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
        for name, b in self.buffers.items():
            self.buffers[name] = b.astype(dtype)
        return self

    def num_params(self):
        return sum(s.size for s in self.specs.values())

    # -- forward ------------------------------------------------------------------
    def encode_image(self, images: Tensor) -> EncoderOutput:
        return encoder.encoder_forward(images, self.params, self.cfg, self.buffers, self.training)

    def decode(self, enc: EncoderOutput, boxes, points=None, scribbles=None,
               zero_hypernetwork=False) -> DecoderOutput:
        """Decode one prompt set per image.

        ``boxes`` (B, 4) as x_min, y_min, x_max, y_max; ``points`` (B, n, 2) or None;
        ``scribbles`` (B, S, S) binary or None.
        """
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        b = boxes.shape[0]
        corners = boxes.reshape(b, 2, 2)
        sparse = promptenc.encode_sparse(points, corners, self.params, self.cfg.img_size)
        s = self.cfg.img_size
        if scribbles is None:
            scribbles = np.zeros((b, s, s), dtype=np.uint8)
        dense = promptenc.encode_dense(scribbles, self.params, self.cfg)
        return decoder.decode_masks(enc, sparse.tokens, dense, self.params, self.cfg,
                                    zero_hypernetwork=zero_hypernetwork)

    def forward(self, images, boxes, points=None, scribbles=None) -> DecoderOutput:
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=next(iter(self.params.values())).dtype))
        if images.ndim == 3:
            images = images.reshape((1,) + images.shape)
        return self.decode(self.encode_image(images), boxes, points, scribbles)

    __call__ = forward
