"""Test-set metrics, noise injection and the ablation run matrix."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .dataio import NormStats, apply_norm, gather_windows, instance_normalize, num_windows
from .errors import ConfigError, WindowError
from .mpmc import ModelParams, forward_normalized
from .numerics import make_rng
from .ram import INFERENCE, RamConfig

log = logging.getLogger(__name__)

# (B, n, c) histories -> (B, t, c) forecasts, both in the evaluation scale
Forecaster = Callable[[np.ndarray], np.ndarray]
Model = Union[ModelParams, Forecaster]

NOISE_MODES = ("uniform", "corrupt")


@dataclass(frozen=True)
class ForecastReport:
    dataset: str
    n: int
    t: int
    variant: str
    noise_eps: float
    mse: float
    mae: float
    num_windows: int
    seed: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def inject_noise(x: np.ndarray, eps: float, rng: np.random.Generator, mode: str = "uniform") -> np.ndarray:
    """Amplitude-proportional noise on raw values.

    ``uniform``: ``x + eps * u`` with ``u ~ U[-2|x|, 2|x|]`` per element.
    ``corrupt``: each element is, with probability ``eps``, replaced by a
    draw from ``U[-2|x|, 2|x|]``.
    """
    if eps < 0:
        raise ConfigError(f"noise magnitude must be non-negative, got {eps}")
    if mode not in NOISE_MODES:
        raise ConfigError(f"noise mode must be one of {NOISE_MODES}, got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if eps == 0:
        return x.copy()
    amp = 2.0 * np.abs(x)
    u = rng.uniform(-1.0, 1.0, x.shape) * amp
    if mode == "uniform":
        return x + eps * u
    hit = rng.random(x.shape) < eps
    return np.where(hit, u, x)


def predict_normalized(model: Model, histories: np.ndarray) -> np.ndarray:
    """Inference-mode forecast in the history's own scale."""
    if isinstance(model, ModelParams):
        x_norm, stats = instance_normalize(histories)
        y = forward_normalized(x_norm, model, RamConfig(model.config.p, INFERENCE)).data
        return y * stats.std + stats.mean
    return np.asarray(model(histories), dtype=np.float64)


def forecast_errors(model: Model, values: np.ndarray, n: int, t: int, *,
                    scaler: NormStats | None = None, noise_eps: float = 0.0,
                    noise_rng: np.random.Generator | None = None, noise_mode: str = "uniform",
                    batch_size: int = 128) -> tuple[float, float, int]:
    """Mean squared and absolute error over every stride-1 window.

    ``values`` are raw; noise (if any) hits raw histories, then histories
    and targets are standardized with ``scaler`` before the model sees them.
    """
    count = num_windows(len(values), n, t)
    if noise_eps and noise_rng is None:
        raise ConfigError("noise injection needs an rng")
    sq = ab = 0.0
    for lo in range(0, count, batch_size):
        starts = np.arange(lo, min(lo + batch_size, count))
        hist, targ = gather_windows(values, starts, n, t)
        if noise_eps:
            hist = inject_noise(hist, noise_eps, noise_rng, noise_mode)
        if scaler is not None:
            hist, targ = apply_norm(hist, scaler), apply_norm(targ, scaler)
        err = predict_normalized(model, hist) - targ
        sq += float((err * err).sum())
        ab += float(np.abs(err).sum())
    total = count * t * values.shape[1]
    return sq / total, ab / total, count


def evaluate(model: Model, values: np.ndarray, n: int, t: int, *, scaler: NormStats | None = None,
             dataset: str = "", variant: str | None = None, seed: int = 0, noise_eps: float = 0.0,
             noise_mode: str = "uniform", batch_size: int = 128) -> ForecastReport:
    """Inference-mode MSE/MAE on a test partition.

    Noise draws come from a stream keyed on ``(seed, noise_eps)`` so that
    repeated evaluations are identical.
    """
    values = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if len(values) < n + t:
        raise WindowError(f"test partition of length {len(values)} is shorter than n + t = {n + t}")
    rng = make_rng([seed, int(round(noise_eps * 1e6))]) if noise_eps else None
    mse, mae, count = forecast_errors(model, values, n, t, scaler=scaler, noise_eps=noise_eps,
                                      noise_rng=rng, noise_mode=noise_mode, batch_size=batch_size)
    if variant is None:
        variant = model.config.variant if isinstance(model, ModelParams) else "external"
    return ForecastReport(dataset, n, t, variant, float(noise_eps), mse, mae, count, seed)


def write_reports(reports: Sequence[ForecastReport], csv_path: str | Path,
                  summary_path: str | Path | None = None) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ForecastReport.columns())
        writer.writeheader()
        for r in reports:
            writer.writerow(asdict(r))
    if summary_path is not None:
        Path(summary_path).write_text(json.dumps(summarize(reports), indent=2) + "\n")


def read_reports(csv_path: str | Path) -> list[ForecastReport]:
    with Path(csv_path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(ForecastReport(r["dataset"], int(r["n"]), int(r["t"]), r["variant"], float(r["noise_eps"]),
                                  float(r["mse"]), float(r["mae"]), int(r["num_windows"]), int(r["seed"])))
    return out


def summarize(reports: Iterable[ForecastReport]) -> list[dict]:
    """Mean and population std of MSE/MAE per (dataset, n, t, variant, eps) cell."""
    cells: dict[tuple, list[ForecastReport]] = {}
    for r in reports:
        cells.setdefault((r.dataset, r.n, r.t, r.variant, r.noise_eps), []).append(r)
    out = []
    for (ds, n, t, variant, eps), rs in cells.items():
        mse = np.array([r.mse for r in rs])
        mae = np.array([r.mae for r in rs])
        out.append({
            "dataset": ds, "n": n, "t": t, "variant": variant, "noise_eps": eps,
            "seeds": [r.seed for r in rs],
            "mse_mean": float(mse.mean()), "mse_std": float(mse.std()),
            "mae_mean": float(mae.mean()), "mae_std": float(mae.std()),
        })
    return out
