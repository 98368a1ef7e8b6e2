"""Supervised training: MSE loss, Adam, plateau halving and early stopping."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import NormStats, apply_norm, gather_windows, instance_normalize, num_windows
from .errors import ConfigError, ShapeError, TrainingError
from .evaluation import forecast_errors
from .mpmc import ModelParams, forward_normalized
from .numerics import GradTape, Tensor, add, mean, mul, sub
from .ram import TRAINING, RamConfig

log = logging.getLogger(__name__)

LOSS_SPACES = ("instance", "global")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    patience: int = 5
    seed: int = 0
    clip_norm: float | None = 5.0
    halve_after: int = 2
    eval_batch_size: int = 128
    # "instance": target normalized with the history's own statistics
    loss_space: str = "instance"
    # None trains on every window each epoch
    max_batches: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError(f"epochs, batch_size and patience must be >= 1: {self}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.loss_space not in LOSS_SPACES:
            raise ConfigError(f"loss_space must be one of {LOSS_SPACES}, got {self.loss_space!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    iterations: int = 0

    @property
    def best_val(self) -> float:
        return min(r.val_mse for r in self.epochs)

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse", "lr", "seconds"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_mse), repr(r.val_mse), repr(r.lr), f"{r.seconds:.3f}"])


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor._wrap(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    d = sub(pred, target)
    return mean(mul(d, d))


class Adam:
    """Adam with bias correction over a name -> array mapping."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.isfinite(g).all():
                bad = int((~np.isfinite(g)).sum())
                raise TrainingError(f"non-finite gradient for parameter {name!r} ({bad} entries)")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= factor
    return norm


def _values(data) -> np.ndarray:
    return np.asarray(getattr(data, "values", data), dtype=np.float64)


def train(params: ModelParams, train_data, val_data, cfg: TrainConfig,
          scaler: NormStats | None = None) -> tuple[ModelParams, TrainHistory]:
    """Fit ``params`` in place and return them restored to the best epoch.

    ``train_data``/``val_data`` are raw (T, c) partitions (or series);
    ``scaler`` standardizes them before windows reach the model.
    """
    n, t = params.config.n, params.config.t
    train_vals, val_vals = _values(train_data), _values(val_data)
    if scaler is not None:
        train_vals, val_vals = apply_norm(train_vals, scaler), apply_norm(val_vals, scaler)
    count = num_windows(len(train_vals), n, t)
    num_windows(len(val_vals), n, t)
    shuffle_seq, mask_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.Generator(np.random.Philox(shuffle_seq))
    mask_rng = np.random.Generator(np.random.Philox(mask_seq))
    ram_cfg = RamConfig(params.config.p, TRAINING)

    named = params.tensors()
    arrays = {name: tensor.data for name, tensor in named}
    opt = Adam(cfg.learning_rate)
    history = TrainHistory()
    best_val, best_state, bad = math.inf, params.state(), 0

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = shuffle_rng.permutation(count)
        batches = [order[i:i + cfg.batch_size] for i in range(0, count, cfg.batch_size)]
        if cfg.max_batches is not None:
            batches = batches[:cfg.max_batches]
        running = 0.0
        for idx in batches:
            hist, targ = gather_windows(train_vals, idx, n, t)
            x_norm, stats = instance_normalize(hist)
            with GradTape() as tape:
                pred = forward_normalized(x_norm, params, ram_cfg, mask_rng)
                if cfg.loss_space == "instance":
                    loss = mse_loss(pred, apply_norm(targ, stats))
                else:
                    loss = mse_loss(add_stats(pred, stats), targ)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, iteration {history.iterations + 1}")
            for _, tensor in named:
                tensor.grad = None
            tape.backward(loss)
            grads = {name: (tensor.grad if tensor.grad is not None else np.zeros(tensor.shape))
                     for name, tensor in named}
            if cfg.clip_norm is not None:
                clip_grad_norm(grads, cfg.clip_norm)
            opt.step(arrays, grads)
            running += value * len(idx)
            history.iterations += 1
        train_mse = running / sum(len(b) for b in batches)
        val_mse, _, _ = forecast_errors(params, val_vals, n, t, batch_size=cfg.eval_batch_size)
        if not math.isfinite(val_mse):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.epochs.append(EpochRecord(epoch, train_mse, val_mse, opt.lr, time.perf_counter() - start))
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch, train_mse, val_mse, opt.lr)
        if val_mse < best_val:
            best_val, best_state, bad = val_mse, params.state(), 0
            history.best_epoch = epoch
        else:
            bad += 1
            if bad >= cfg.patience:
                break
            if bad % cfg.halve_after == 0:
                opt.lr *= 0.5
    params.load_state(best_state)
    return params, history


def add_stats(pred: Tensor, stats: NormStats) -> Tensor:
    """Denormalize a forecast tensor with fixed instance statistics."""
    return add(mul(pred, Tensor._wrap(np.broadcast_to(stats.std, pred.shape).copy())),
               Tensor._wrap(np.broadcast_to(stats.mean, pred.shape).copy()))
