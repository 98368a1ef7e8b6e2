"""Random attention: a Bernoulli-masked all-ones patch interaction.

Training multiplies the patch axis by a fresh 0/1 mask (entry dropped with
probability ``p``); inference replaces the mask by its expectation, so the
interaction collapses to ``(1 - p)`` times the column sum of the input.
Both are wrapped in a plain additive residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Tensor, add, matmul, scale, softmax, swapaxes

TRAINING = "training"
INFERENCE = "inference"


@dataclass(frozen=True)
class RamConfig:
    p: float = 0.85
    mode: str = TRAINING

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ConfigError(f"disconnect probability p must lie in [0, 1), got {self.p}")
        if self.mode not in (TRAINING, INFERENCE):
            raise ConfigError(f"mode must be {TRAINING!r} or {INFERENCE!r}, got {self.mode!r}")

    def with_mode(self, mode: str) -> "RamConfig":
        return RamConfig(self.p, mode)


@dataclass(frozen=True)
class InteractionMask:
    m: np.ndarray
    seed_record: dict = field(repr=False)


def _check_p(p: float) -> None:
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"disconnect probability p must lie in [0, 1), got {p}")


def sample_mask(N: int, p: float, rng: np.random.Generator) -> InteractionMask:
    _check_p(p)
    if N < 1:
        raise ConfigError(f"mask size must be positive, got {N}")
    state = rng.bit_generator.state
    return InteractionMask((rng.random((N, N)) >= p).astype(np.float64), state)


def sample_masks(batch: int, N: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """(batch, N, N) independent masks."""
    _check_p(p)
    return (rng.random((batch, N, N)) >= p).astype(np.float64)


def ram_forward(x: Tensor, cfg: RamConfig, rng: np.random.Generator | None = None,
                share: int = 1) -> Tensor:
    """Patch interaction on (..., N, D).

    In training mode one mask is drawn per group of ``share`` consecutive
    leading rows (the channels of one sample); a 2-D input gets one mask.
    """
    n = x.shape[-2]
    if cfg.mode == INFERENCE:
        return scale(matmul(np.ones((n, n)), x), 1.0 - cfg.p)
    if rng is None:
        raise ConfigError("training-mode random attention needs an rng")
    if x.ndim == 2:
        return matmul(sample_mask(n, cfg.p, rng).m, x)
    lead = int(np.prod(x.shape[:-2]))
    if lead % share:
        raise ShapeError(f"leading size {lead} is not a multiple of mask sharing group {share}")
    masks = sample_masks(lead // share, n, cfg.p, rng)
    masks = np.repeat(masks, share, axis=0).reshape(x.shape[:-2] + (n, n))
    return matmul(masks, x)


def ram_block(x: Tensor, cfg: RamConfig, rng: np.random.Generator | None = None,
              share: int = 1) -> Tensor:
    return add(x, ram_forward(x, cfg, rng, share))


@dataclass
class SamWeights:
    wq: Tensor
    wk: Tensor
    wv: Tensor

    @classmethod
    def init(cls, d_model: int, rng: np.random.Generator) -> "SamWeights":
        bound = 1.0 / math.sqrt(d_model)
        return cls(*(Tensor(rng.uniform(-bound, bound, (d_model, d_model)), requires_grad=True)
                     for _ in range(3)))

    def tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.wq", self.wq), (f"{prefix}.wk", self.wk), (f"{prefix}.wv", self.wv)]


def sam_block(x: Tensor, w: SamWeights) -> Tensor:
    """Single-head scaled dot-product self-attention with residual (ablation)."""
    d = x.shape[-1]
    if w.wq.shape != (d, d):
        raise ShapeError(f"attention weights {w.wq.shape} do not match feature size {d}")
    q = matmul(x, w.wq)
    k = matmul(x, w.wk)
    v = matmul(x, w.wv)
    scores = scale(matmul(q, swapaxes(k)), 1.0 / math.sqrt(d))
    return add(x, matmul(softmax(scores), v))
