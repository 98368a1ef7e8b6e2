"""Variant x noise x seed run matrix."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

from .dataio import BenchmarkData
from .errors import ConfigError
from .evaluation import ForecastReport, evaluate, write_reports
from .mpmc import VARIANTS, ModelConfig, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

log = logging.getLogger(__name__)


def checkpoint_name(dataset: str, n: int, t: int, variant: str, seed: int) -> str:
    return f"{dataset}_n{n}_t{t}_{variant}_s{seed}"


def run_ablation_matrix(data: BenchmarkData, n: int, t: int, variants: Sequence[str],
                        eps_list: Sequence[float], cfg: TrainConfig, seeds: Sequence[int] = (0,), *,
                        model_kwargs: dict | None = None, out_dir: str | Path | None = None,
                        reuse: bool = True, noise_mode: str = "uniform") -> list[ForecastReport]:
    """Train each variant once per seed, evaluate it at every noise level.

    With ``out_dir`` set, checkpoints land in ``checkpoints/`` (and are
    reloaded when ``reuse`` is on), histories in ``history/`` and the run
    matrix in ``reports/ablation_<dataset>_n<n>_t<t>.csv`` plus a JSON summary.
    """
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variants {unknown}; choose from {VARIANTS}")
    model_kwargs = dict(model_kwargs or {})
    out = Path(out_dir) if out_dir is not None else None
    reports: list[ForecastReport] = []
    c = data.train.channels
    for seed in seeds:
        for variant in variants:
            config = ModelConfig(n=n, t=t, c=c, variant=variant, **model_kwargs)
            name = checkpoint_name(data.name, n, t, variant, seed)
            ckpt = out / "checkpoints" / f"{name}.semx" if out else None
            if reuse and ckpt is not None and ckpt.exists():
                params = load_checkpoint(ckpt)
                if params.config != config:
                    raise ConfigError(f"existing checkpoint {ckpt} was trained with {params.config}")
            else:
                run_cfg = TrainConfig(**{**cfg.__dict__, "seed": seed})
                params, history = train(init_params(config, seed), data.train, data.val, run_cfg, data.scaler)
                if out is not None:
                    save_checkpoint(params, ckpt)
                    history.to_csv(out / "history" / f"{name}.csv")
            for eps in eps_list:
                report = evaluate(params, data.test.values, n, t, scaler=data.scaler, dataset=data.name,
                                  seed=seed, noise_eps=eps, noise_mode=noise_mode)
                log.info("%s eps=%.2f mse=%.4f mae=%.4f", name, eps, report.mse, report.mae)
                reports.append(report)
    if out is not None:
        stem = out / "reports" / f"ablation_{data.name}_n{n}_t{t}"
        write_reports(reports, stem.with_suffix(".csv"), stem.with_suffix(".json"))
    return reports
