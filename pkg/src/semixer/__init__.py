"""SEMixer: multiscale patch mixer with a random attention mechanism for long-horizon forecasting."""

from .dataio import BenchmarkData, MultivariateSeries, load_benchmark, load_csv, synthetic_series
from .encoder import ScaleSpec, build_scale_specs
from .evaluation import ForecastReport, evaluate, inject_noise
from .mpmc import ModelConfig, ModelParams, init_params, load_checkpoint, save_checkpoint, semixer_forward
from .ram import RamConfig
from .training import TrainConfig, TrainHistory, train

__all__ = [
    "BenchmarkData", "ForecastReport", "ModelConfig", "ModelParams", "MultivariateSeries", "RamConfig",
    "ScaleSpec", "TrainConfig", "TrainHistory", "build_scale_specs", "evaluate", "init_params",
    "inject_noise", "load_benchmark", "load_checkpoint", "load_csv", "save_checkpoint", "semixer_forward",
    "synthetic_series", "train",
]
