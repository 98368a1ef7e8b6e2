"""Built-in oracle checks run by ``semixer verify`` and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .dataio import denormalize, instance_normalize
from .encoder import build_scale_specs
from .mpmc import ModelConfig, forward_normalized, init_params
from .numerics import Tensor, grad_check, grad_check_params, make_rng
from .ram import INFERENCE, TRAINING, RamConfig, SamWeights, ram_forward, sam_block
from .training import mse_loss

PRIMITIVE_TOL = 1e-4
MODEL_GRAD_TOL = 1e-4
RAM_REL_TOL = 0.02
ROUND_TRIP_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _primitive_cases(rng: np.random.Generator) -> dict[str, Callable[[Tensor], Tensor]]:
    u = lambda *shape: rng.uniform(-1, 1, shape)  # noqa: E731
    w = Tensor(u(4, 3))
    other = Tensor(u(3, 4))
    g, b = Tensor(u(4)), Tensor(u(4))
    stack = Tensor(u(3, 4, 2))
    return {
        "matmul": lambda x: nx.total(nx.mul(nx.matmul(x, w), nx.matmul(x, w))),
        "batched_matmul": lambda x: nx.total(nx.gelu(nx.matmul(nx.reshape(x, (3, 1, 4)), stack))),
        "add_sub_mul": lambda x: nx.total(nx.mul(nx.sub(nx.add(x, other), 0.5), x)),
        "bias_broadcast": lambda x: nx.total(nx.mul(nx.add(x, b), nx.add(x, b))),
        "scale": lambda x: nx.total(nx.mul(nx.scale(x, 0.15), x)),
        "gelu": lambda x: nx.total(nx.gelu(nx.scale(x, 3.0))),
        "transpose": lambda x: nx.total(nx.mul(nx.swapaxes(x, 0, 1), w)),
        "reshape": lambda x: nx.total(nx.mul(nx.reshape(x, (4, 3)), w)),
        "concat_take": lambda x: nx.total(nx.gelu(nx.take(nx.concat([x, other], axis=0), 1, 5, axis=0))),
        "softmax": lambda x: nx.total(nx.mul(nx.softmax(x), other)),
        "layer_norm": lambda x: nx.total(nx.mul(nx.layer_norm(x, g, b), other)),
        "mean": lambda x: nx.mean(nx.mul(x, x)),
    }


def check_primitive_gradients(seed: int = 0) -> CheckResult:
    start = time.perf_counter()
    rng = make_rng(seed)
    errors = {}
    for name, f in _primitive_cases(rng).items():
        x = Tensor(rng.uniform(-1, 1, (3, 4)))
        errors[name] = grad_check(f, x, eps=1e-5)
    worst = max(errors, key=errors.get)
    ok = errors[worst] < PRIMITIVE_TOL
    return CheckResult("primitive gradients", ok,
                       f"{len(errors)} primitives, max rel err {errors[worst]:.2e} ({worst}) < {PRIMITIVE_TOL:g}",
                       time.perf_counter() - start)


def toy_model_gradient_error(seed: int = 0, num_coords: int = 20) -> float:
    """End-to-end check on (n=64, N1=8, S=2, c=2, t=8) with training-mode masks."""
    cfg = ModelConfig(n=64, t=8, c=2, n1=8, alphas=(2,))
    params = init_params(cfg, seed)
    rng = make_rng(seed + 1)
    x = rng.standard_normal((2, 64, 2))
    x_norm, stats = instance_normalize(x)
    target = (rng.standard_normal((2, 8, 2)) - stats.mean) / stats.std
    ram_cfg = RamConfig(cfg.p, TRAINING)

    def loss_fn():
        return mse_loss(forward_normalized(x_norm, params, ram_cfg, make_rng(seed + 2)), target)

    tensors = params.parameters()
    sizes = np.array([t.size for t in tensors])
    flat = rng.choice(sizes.sum(), size=num_coords, replace=False)
    bounds = np.cumsum(sizes)
    coords = []
    for j in flat:
        i = int(np.searchsorted(bounds, j, side="right"))
        coords.append((i, int(j - (bounds[i - 1] if i else 0))))
    return grad_check_params(loss_fn, tensors, coords, eps=1e-5)


def check_model_gradient(seed: int = 0) -> CheckResult:
    start = time.perf_counter()
    err = toy_model_gradient_error(seed)
    return CheckResult("end-to-end gradient", err < MODEL_GRAD_TOL,
                       f"20 random parameters, max rel err {err:.2e} < {MODEL_GRAD_TOL:g}",
                       time.perf_counter() - start)


def ram_expectation_error(N: int = 16, D: int = 8, samples: int = 10_000, p: float = 0.85,
                          seed: int = 0) -> float:
    """Relative Frobenius error between the mean training output and inference output.

    Inputs are uniform on [0, 1): for zero-mean inputs the sampling error
    alone is about sqrt(p / ((1 - p) * samples)), i.e. 2.4% at the defaults.
    """
    rng = make_rng(seed)
    x = Tensor(rng.random((N, D)))
    train_cfg = RamConfig(p, TRAINING)
    acc = np.zeros((N, D))
    for _ in range(samples):
        acc += ram_forward(x, train_cfg, rng).data
    inference = ram_forward(x, RamConfig(p, INFERENCE)).data
    return float(np.linalg.norm(acc / samples - inference) / np.linalg.norm(inference))


def check_ram_expectation(seed: int = 0) -> CheckResult:
    start = time.perf_counter()
    err = ram_expectation_error(seed=seed)
    return CheckResult("RAM expectation equivalence", err < RAM_REL_TOL,
                       f"Monte-Carlo relative error {err:.4%} over 10000 masks (bound {RAM_REL_TOL:.0%})",
                       time.perf_counter() - start)


def check_patch_counts(n: int = 512) -> CheckResult:
    start = time.perf_counter()
    specs = build_scale_specs(n)
    counts = [s.num_patches for s in specs]
    total = sum(counts)
    ok = counts == [64, 32, 16, 8] and total == 120
    ratio = ":".join(str(c // counts[-1]) for c in counts)
    return CheckResult("patch arithmetic", ok,
                       f"n={n} counts={'/'.join(map(str, counts))} ratio={ratio} total={total}",
                       time.perf_counter() - start)


def instance_norm_round_trip_error(windows: int = 1000, seed: int = 0) -> float:
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(windows):
        x = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 20), (96, 7))
        z, stats = instance_normalize(x)
        worst = max(worst, float(np.abs(denormalize(z, stats) - x).max()))
    return worst


def check_round_trip(seed: int = 0) -> CheckResult:
    start = time.perf_counter()
    err = instance_norm_round_trip_error(seed=seed)
    return CheckResult("instance-norm round trip", err < ROUND_TRIP_TOL,
                       f"1000 windows, max abs err {err:.2e} < {ROUND_TRIP_TOL:g}",
                       time.perf_counter() - start)


def check_matmul_oracle(seed: int = 0) -> CheckResult:
    start = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    for m, k, n in [(3, 4, 2), (16, 16, 16), (1, 7, 5)]:
        a, b = rng.uniform(-1, 1, (m, k)), rng.uniform(-1, 1, (k, n))
        ref = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                for q in range(k):
                    ref[i, j] += a[i, q] * b[q, j]
        worst = max(worst, float(np.abs(nx.matmul(a, b).data - ref).max()))
    return CheckResult("matmul vs triple loop", worst < 1e-12, f"max abs err {worst:.1e} < 1e-12",
                       time.perf_counter() - start)


def attention_op_counts(N: int = 16, D: int = 8, seed: int = 0) -> tuple[int, int]:
    """Primitive counts of inference-mode RAM vs single-head self-attention."""
    rng = make_rng(seed)
    x = Tensor(rng.standard_normal((N, D)))
    with nx.OpCounter() as ram_ops:
        ram_forward(x, RamConfig(0.85, INFERENCE))
    with nx.OpCounter() as sam_ops:
        sam_block(x, SamWeights.init(D, rng))
    # sam_block includes its residual add; RAM's residual is outside ram_forward
    return ram_ops.total, sam_ops.total - 1


def check_op_counts() -> CheckResult:
    start = time.perf_counter()
    ram, sam = attention_op_counts()
    return CheckResult("RAM cheaper than self-attention", ram < sam,
                       f"RAM {ram} primitives (matmul + scale) vs self-attention {sam}",
                       time.perf_counter() - start)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [
        check_matmul_oracle(seed),
        check_primitive_gradients(seed),
        check_model_gradient(seed),
        check_ram_expectation(seed),
        check_patch_counts(),
        check_round_trip(seed),
        check_op_counts(),
    ]
