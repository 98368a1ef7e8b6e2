"""Multiscale patching and patch embedding.

Every channel is encoded independently with shared weights.  Scale ``s``
cuts the (end-padded) history into ``N`` patches of length ``L`` at stride
``K = L / 2``; patch counts follow ``N = floor((n - L) / K) + 2``, where the
extra patch comes from replicating the last value ``K`` times.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Tensor, add, linear


@dataclass(frozen=True)
class ScaleSpec:
    s: int
    alpha: int
    patch_len: int
    stride: int
    num_patches: int


def patch_count(n: int, patch_len: int, stride: int) -> int:
    return (n - patch_len) // stride + 2


def _finest_patch_len(n: int, n1: int) -> int | None:
    for length in range(2, n + 1, 2):
        if patch_count(n, length, length // 2) == n1:
            return length
    return None


def _nearby_valid(n: int, n1: int, alphas: Sequence[int], reach: int = 256) -> list[int]:
    found = []
    for delta in range(1, reach):
        for cand in (n - delta, n + delta):
            if cand > 1 and cand not in found and _feasible(cand, n1, alphas):
                found.append(cand)
        if len(found) >= 2:
            break
    return sorted(found)


def _feasible(n: int, n1: int, alphas: Sequence[int]) -> bool:
    l1 = _finest_patch_len(n, n1)
    return l1 is not None and all(a * l1 <= n for a in alphas)


def build_scale_specs(n: int, N1: int = 64, S: int | None = None,
                      alphas: Sequence[int] = (2, 4, 8)) -> list[ScaleSpec]:
    """Patch geometry for every scale, finest first.

    The finest patch length is the smallest even ``L`` giving exactly ``N1``
    patches; coarser scales use ``alpha * L`` with half-length strides.
    """
    alphas = [int(a) for a in alphas]
    if S is not None and S != len(alphas) + 1:
        raise ConfigError(f"S={S} requires {S - 1} scale factors, got {len(alphas)}")
    if N1 < 2:
        raise ConfigError(f"N1 must be at least 2, got {N1}")
    if any(a < 2 for a in alphas):
        raise ConfigError(f"scale factors must be integers >= 2, got {alphas}")
    l1 = _finest_patch_len(n, N1)
    if l1 is None or any(a * l1 > n for a in alphas):
        near = _nearby_valid(n, N1, alphas)
        raise ConfigError(
            f"input length n={n} admits no even finest patch length L with "
            f"floor((n - L)/(L/2)) + 2 = N1 = {N1} (even-L1 rule); "
            f"nearby valid n: {near or 'none'}"
        )
    specs = []
    for s, alpha in enumerate([1] + alphas, start=1):
        length = alpha * l1
        stride = length // 2
        specs.append(ScaleSpec(s, alpha, length, stride, patch_count(n, length, stride)))
    return specs


def patchify(x: np.ndarray, spec: ScaleSpec) -> np.ndarray:
    """(..., n) -> (..., N, L), patch ``i`` covering padded indices [i*K, i*K + L)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if patch_count(n, spec.patch_len, spec.stride) != spec.num_patches:
        raise ShapeError(f"series length {n} does not match scale spec {spec}")
    pad = np.repeat(x[..., -1:], spec.stride, axis=-1)
    padded = np.concatenate([x, pad], axis=-1)
    idx = np.arange(spec.num_patches)[:, None] * spec.stride + np.arange(spec.patch_len)[None, :]
    return padded[..., idx]


@dataclass
class EncoderWeights:
    projections: list[Tensor]  # per scale, (D, L)
    positions: list[Tensor]  # per scale, (N, D)

    @classmethod
    def init(cls, specs: Sequence[ScaleSpec], d_model: int, rng: np.random.Generator) -> "EncoderWeights":
        proj, pos = [], []
        for spec in specs:
            bound = 1.0 / np.sqrt(spec.patch_len)
            proj.append(Tensor(rng.uniform(-bound, bound, (d_model, spec.patch_len)), requires_grad=True))
            pos.append(Tensor(rng.uniform(-0.02, 0.02, (spec.num_patches, d_model)), requires_grad=True))
        return cls(proj, pos)

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, p) in enumerate(zip(self.projections, self.positions), start=1):
            out += [(f"encoder.{i}.proj", w), (f"encoder.{i}.pos", p)]
        return out


def embed(patches, weights: EncoderWeights, s: int) -> Tensor:
    """Project (..., N, L) patches to (..., N, D) and add the position table.

    ``s`` is the 1-based scale index.
    """
    proj, pos = weights.projections[s - 1], weights.positions[s - 1]
    patches = patches if isinstance(patches, Tensor) else Tensor._wrap(np.asarray(patches, dtype=np.float64))
    if patches.shape[-1] != proj.shape[1] or patches.shape[-2] != pos.shape[0]:
        raise ShapeError(
            f"embed scale {s}: patches {patches.shape} incompatible with projection {proj.shape} "
            f"and position table {pos.shape}"
        )
    return add(linear(patches, proj), pos)
