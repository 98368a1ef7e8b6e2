"""The progressive fine-to-coarse mixing chain, prediction head and model I/O."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import denormalize, instance_normalize
from .encoder import EncoderWeights, ScaleSpec, build_scale_specs, patchify
from .encoder import embed as embed_scale
from .errors import CheckpointError, ConfigError, ShapeError
from .mixing import MixerBlockWeights, temporal_mixing_block
from .numerics import Tensor, concat, linear, make_rng, reshape, take, transpose
from .ram import INFERENCE, RamConfig

VARIANTS = ("full", "no_ram", "no_mpmc", "sam")
_ATTENTION = {"full": "ram", "no_ram": "none", "no_mpmc": "ram", "sam": "sam"}

MAGIC = b"SEMX1"
_HEADER = struct.Struct("<7I")


@dataclass(frozen=True)
class ModelConfig:
    n: int
    t: int
    c: int = 1
    d_model: int = 128
    n1: int = 64
    alphas: tuple[int, ...] = (2, 4, 8)
    p: float = 0.85
    integrate_dim: int = 64
    variant: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(int(a) for a in self.alphas))
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.t, self.c, self.d_model, self.integrate_dim) < 1:
            raise ConfigError(f"t, c, D and integrate size must be positive: {self}")
        RamConfig(self.p)

    @property
    def S(self) -> int:
        return len(self.alphas) + 1

    def scale_specs(self) -> list[ScaleSpec]:
        return build_scale_specs(self.n, self.n1, self.S, self.alphas)


def block_sizes(specs: Sequence[ScaleSpec], variant: str = "full") -> list[int]:
    """Patch-axis size of every temporal mixing block in the chain."""
    counts = [s.num_patches for s in specs]
    if variant == "no_mpmc":
        return [sum(counts)]
    return [counts[0]] + [counts[i - 1] + counts[i] for i in range(1, len(counts))]


@dataclass
class ModelParams:
    config: ModelConfig
    specs: list[ScaleSpec]
    encoder: EncoderWeights
    blocks: list[MixerBlockWeights]
    integ_w: Tensor  # (integrate_dim, D)
    integ_b: Tensor
    pred_w: Tensor  # (t, total_patches * integrate_dim)
    pred_b: Tensor
    _named: list[tuple[str, Tensor]] = field(default=None, repr=False)

    def __post_init__(self):
        expected = block_sizes(self.specs, self.config.variant)
        actual = [b.num_patches for b in self.blocks]
        if actual != expected:
            raise ShapeError(f"chain blocks sized {actual}, arithmetic requires {expected}")

    def tensors(self) -> list[tuple[str, Tensor]]:
        """All learnable arrays, in checkpoint declaration order."""
        if self._named is None:
            named = self.encoder.tensors()
            for i, blk in enumerate(self.blocks, start=1):
                named += blk.tensors(f"block.{i}")
            named += [("integrate.w", self.integ_w), ("integrate.b", self.integ_b),
                      ("predictor.w", self.pred_w), ("predictor.b", self.pred_b)]
            self._named = named
        return self._named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.tensors()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def state(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.parameters()]

    def load_state(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"state has {len(arrays)} arrays, model has {len(params)}")
        for p, a in zip(params, arrays):
            if a.shape != p.shape:
                raise ShapeError(f"state array {a.shape} does not match parameter {p.shape}")
            p.data[...] = a


def init_params(config: ModelConfig, rng: np.random.Generator | int = 0) -> ModelParams:
    if isinstance(rng, (int, np.integer)):
        rng = make_rng(int(rng))
    specs = config.scale_specs()
    d = config.d_model
    encoder = EncoderWeights.init(specs, d, rng)
    attention = _ATTENTION[config.variant]
    blocks = [MixerBlockWeights.init(size, d, rng, attention) for size in block_sizes(specs, config.variant)]
    bound = 1.0 / math.sqrt(d)
    integ_w = Tensor(rng.uniform(-bound, bound, (config.integrate_dim, d)), requires_grad=True)
    integ_b = Tensor(rng.uniform(-bound, bound, config.integrate_dim), requires_grad=True)
    flat = sum(s.num_patches for s in specs) * config.integrate_dim
    bound = 1.0 / math.sqrt(flat)
    pred_w = Tensor(rng.uniform(-bound, bound, (config.t, flat)), requires_grad=True)
    pred_b = Tensor(rng.uniform(-bound, bound, config.t), requires_grad=True)
    return ModelParams(config, specs, encoder, blocks, integ_w, integ_b, pred_w, pred_b)


def encode(x_norm: np.ndarray, params: ModelParams) -> list[Tensor]:
    """(B, n, c) normalized histories -> per-scale (B*c, N, D) embeddings.

    Row ``b * c + ch`` holds channel ``ch`` of sample ``b``.
    """
    if x_norm.ndim != 3 or x_norm.shape[1] != params.config.n:
        raise ShapeError(f"expected (B, {params.config.n}, c) histories, got {x_norm.shape}")
    series = np.swapaxes(x_norm, 1, 2).reshape(-1, x_norm.shape[1])
    return [embed_scale(patchify(series, spec), params.encoder, spec.s) for spec in params.specs]


def mpmc_forward(embeddings: Sequence[Tensor], params: ModelParams, ram_cfg: RamConfig,
                 rng: np.random.Generator | None = None, share: int = 1) -> list[Tensor]:
    """Fine-to-coarse chain; stage ``s`` keeps only the rows of scale ``s``."""
    if len(embeddings) != len(params.blocks):
        raise ShapeError(f"{len(embeddings)} scale embeddings for a chain of {len(params.blocks)} blocks")
    outs = [temporal_mixing_block(embeddings[0], params.blocks[0], ram_cfg, rng, share)]
    for emb, blk in zip(embeddings[1:], params.blocks[1:]):
        prev = outs[-1]
        mixed = temporal_mixing_block(concat([prev, emb], axis=-2), blk, ram_cfg, rng, share)
        rows = mixed.shape[-2]
        outs.append(take(mixed, rows - emb.shape[-2], rows, axis=-2))
    return outs


def direct_concat_mixing(embeddings: Sequence[Tensor], params: ModelParams, ram_cfg: RamConfig,
                         rng: np.random.Generator | None = None, share: int = 1) -> list[Tensor]:
    joined = concat(list(embeddings), axis=-2) if len(embeddings) > 1 else embeddings[0]
    return [temporal_mixing_block(joined, params.blocks[0], ram_cfg, rng, share)]


def head_forward(outs: Sequence[Tensor], params: ModelParams) -> Tensor:
    """Concat along patches, integrate D -> integrate_dim, flatten row-major, predict t."""
    joined = concat(list(outs), axis=-2) if len(outs) > 1 else outs[0]
    z = linear(joined, params.integ_w, params.integ_b)
    flat = reshape(z, z.shape[:-2] + (z.shape[-2] * z.shape[-1],))
    if flat.shape[-1] != params.pred_w.shape[1]:
        raise ShapeError(f"flattened features {flat.shape} do not match predictor {params.pred_w.shape}")
    return linear(flat, params.pred_w, params.pred_b)


def forward_normalized(x_norm: np.ndarray, params: ModelParams, ram_cfg: RamConfig,
                       rng: np.random.Generator | None = None, direct: bool | None = None) -> Tensor:
    """(B, n, c) normalized histories -> (B, t, c) normalized forecast tensor."""
    B, _, c = x_norm.shape
    embs = encode(x_norm, params)
    if direct is None:
        direct = params.config.variant == "no_mpmc"
    mix = direct_concat_mixing if direct else mpmc_forward
    y = head_forward(mix(embs, params, ram_cfg, rng, share=c), params)
    return transpose(reshape(y, (B, c, params.config.t)), (0, 2, 1))


def _forecast(history: np.ndarray, params: ModelParams, ram_cfg: RamConfig | None,
              rng, direct: bool | None) -> np.ndarray:
    history = np.asarray(history, dtype=np.float64)
    single = history.ndim == 2
    batch = history[None] if single else history
    ram_cfg = ram_cfg or RamConfig(params.config.p, INFERENCE)
    x_norm, stats = instance_normalize(batch)
    y = forward_normalized(x_norm, params, ram_cfg, rng, direct).data
    out = denormalize(y, stats)
    return out[0] if single else out


def semixer_forward(history: np.ndarray, params: ModelParams, ram_cfg: RamConfig | None = None,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Raw (n, c) or (B, n, c) history -> denormalized (t, c) / (B, t, c) forecast."""
    return _forecast(history, params, ram_cfg, rng, None)


def direct_concat_forward(history: np.ndarray, params: ModelParams, ram_cfg: RamConfig | None = None,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Forecast through a single block over all scales (w/o-MPMC structure)."""
    return _forecast(history, params, ram_cfg, rng, True)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    cfg = params.config
    head = bytearray(MAGIC)
    head += _HEADER.pack(cfg.n, cfg.t, cfg.c, cfg.d_model, cfg.S, cfg.n1, cfg.integrate_dim)
    head += struct.pack(f"<{len(cfg.alphas)}I", *cfg.alphas)
    head += struct.pack("<dB", cfg.p, VARIANTS.index(cfg.variant))
    arrays = params.parameters()
    head += struct.pack("<Q", sum(a.size for a in arrays))
    body = b"".join(np.ascontiguousarray(a.data, dtype="<f8").tobytes() for a in arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(head) + body)


def load_checkpoint(path: str | Path) -> ModelParams:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    try:
        off = len(MAGIC)
        n, t, c, d, S, n1, integ = _HEADER.unpack_from(raw, off)
        off += _HEADER.size
        alphas = struct.unpack_from(f"<{S - 1}I", raw, off)
        off += 4 * (S - 1)
        p, variant = struct.unpack_from("<dB", raw, off)
        off += 9
        (count,) = struct.unpack_from("<Q", raw, off)
        off += 8
        config = ModelConfig(n, t, c, d, n1, alphas, p, integ, VARIANTS[variant])
    except (struct.error, IndexError, ConfigError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {exc}") from exc
    params = init_params(config, 0)
    if count != params.num_parameters() or len(raw) - off != 8 * count:
        raise CheckpointError(f"checkpoint {path} holds {count} values; model needs {params.num_parameters()}")
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
    pos = 0
    for tensor in params.parameters():
        tensor.data[...] = values[pos:pos + tensor.size].reshape(tensor.shape)
        pos += tensor.size
    return params
