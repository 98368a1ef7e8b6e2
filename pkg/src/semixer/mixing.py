"""Temporal mixing block: attention substitute, then token and feature MLPs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Tensor, add, gelu, layer_norm, linear, swapaxes
from .ram import RamConfig, SamWeights, ram_block, sam_block

# what sits in front of the MLPs: "ram" (default), "none" (w/o RAM), "sam"
ATTENTION_KINDS = ("ram", "none", "sam")


def _uniform(rng, out_dim: int, in_dim: int) -> tuple[Tensor, Tensor]:
    bound = 1.0 / math.sqrt(in_dim)
    w = Tensor(rng.uniform(-bound, bound, (out_dim, in_dim)), requires_grad=True)
    b = Tensor(rng.uniform(-bound, bound, out_dim), requires_grad=True)
    return w, b


@dataclass
class MixerBlockWeights:
    num_patches: int
    d_model: int
    tok_w1: Tensor  # (H_tok, N)
    tok_b1: Tensor
    tok_w2: Tensor  # (N, H_tok)
    tok_b2: Tensor
    ch_w1: Tensor  # (H_ch, D)
    ch_b1: Tensor
    ch_w2: Tensor  # (D, H_ch)
    ch_b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    attention: str = "ram"
    sam: SamWeights | None = None

    @classmethod
    def init(cls, num_patches: int, d_model: int, rng: np.random.Generator,
             attention: str = "ram") -> "MixerBlockWeights":
        if attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}, got {attention!r}")
        h_tok, h_ch = num_patches, d_model
        tok_w1, tok_b1 = _uniform(rng, h_tok, num_patches)
        tok_w2, tok_b2 = _uniform(rng, num_patches, h_tok)
        ch_w1, ch_b1 = _uniform(rng, h_ch, d_model)
        ch_w2, ch_b2 = _uniform(rng, d_model, h_ch)
        ones = lambda: Tensor(np.ones(d_model), requires_grad=True)  # noqa: E731
        zeros = lambda: Tensor(np.zeros(d_model), requires_grad=True)  # noqa: E731
        sam = SamWeights.init(d_model, rng) if attention == "sam" else None
        return cls(num_patches, d_model, tok_w1, tok_b1, tok_w2, tok_b2,
                   ch_w1, ch_b1, ch_w2, ch_b2, ones(), zeros(), ones(), zeros(), attention, sam)

    def tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        names = ["tok_w1", "tok_b1", "tok_w2", "tok_b2", "ch_w1", "ch_b1", "ch_w2", "ch_b2",
                 "ln1_g", "ln1_b", "ln2_g", "ln2_b"]
        out = [(f"{prefix}.{k}", getattr(self, k)) for k in names]
        if self.sam is not None:
            out += self.sam.tensors(f"{prefix}.sam")
        return out


def inter_patch_mix(x: Tensor, w: MixerBlockWeights) -> Tensor:
    """Pre-norm residual MLP along the patch axis of (..., N, D)."""
    if x.shape[-2] != w.num_patches:
        raise ShapeError(f"inter-patch mixing sized for {w.num_patches} patches, got input {x.shape}")
    h = swapaxes(layer_norm(x, w.ln1_g, w.ln1_b))
    h = linear(gelu(linear(h, w.tok_w1, w.tok_b1)), w.tok_w2, w.tok_b2)
    return add(x, swapaxes(h))


def intra_patch_mix(x: Tensor, w: MixerBlockWeights) -> Tensor:
    """Pre-norm residual MLP along the feature axis, row by row."""
    if x.shape[-1] != w.d_model:
        raise ShapeError(f"intra-patch mixing sized for D={w.d_model}, got input {x.shape}")
    h = layer_norm(x, w.ln2_g, w.ln2_b)
    h = linear(gelu(linear(h, w.ch_w1, w.ch_b1)), w.ch_w2, w.ch_b2)
    return add(x, h)


def temporal_mixing_block(x: Tensor, w: MixerBlockWeights, ram_cfg: RamConfig,
                          rng: np.random.Generator | None = None, share: int = 1) -> Tensor:
    if w.attention == "ram":
        x = ram_block(x, ram_cfg, rng, share)
    elif w.attention == "sam":
        x = sam_block(x, w.sam)
    return intra_patch_mix(inter_patch_mix(x, w), w)
