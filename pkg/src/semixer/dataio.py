"""Benchmark CSV loading, fixed partitions, windowing and instance norm."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LoadError, SplitError, WindowError

NORM_EPS = 1e-5
DATA_DIR_ENV = "SEMIXER_DATA_DIR"

# (train, val, test) partition lengths
SPLITS: dict[str, tuple[int, int, int]] = {
    "etth1": (8545, 2881, 2881),
    "etth2": (8545, 2881, 2881),
    "ettm1": (34465, 11521, 11521),
    "ettm2": (34465, 11521, 11521),
    "weather": (36792, 5271, 10540),
}

FILENAMES = {
    "etth1": "ETTh1.csv",
    "etth2": "ETTh2.csv",
    "ettm1": "ETTm1.csv",
    "ettm2": "ETTm2.csv",
    "weather": "weather.csv",
}


@dataclass(frozen=True)
class MultivariateSeries:
    timestamps: tuple[str, ...]
    values: np.ndarray  # (T, c)
    channel_names: tuple[str, ...]

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> "MultivariateSeries":
        return MultivariateSeries(self.timestamps[start:stop], self.values[start:stop], self.channel_names)


@dataclass(frozen=True)
class WindowSample:
    history: np.ndarray  # (n, c)
    target: np.ndarray  # (t, c)
    origin_index: int


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def _parse_time(text: str, row: int) -> datetime:
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError as exc:
        raise LoadError(f"row {row}: unparseable timestamp {text!r}") from exc


def load_csv(path: str | os.PathLike) -> MultivariateSeries:
    """Read a header-first CSV whose first column is ``date``.

    Row numbers in error messages count the header as row 1.
    """
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip().lower() != "date":
            raise LoadError(f"{path}: first column must be named 'date', got {header[:1] if header else header}")
        names = tuple(h.strip() for h in header[1:])
        if not names:
            raise LoadError(f"{path}: no value columns")
        stamps: list[str] = []
        rows: list[list[float]] = []
        prev = None
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise LoadError(f"row {lineno}: expected {len(header)} cells, got {len(record)}")
            ts = _parse_time(record[0], lineno)
            if prev is not None and ts <= prev:
                raise LoadError(f"row {lineno}: timestamp {record[0]!r} is not after the previous one")
            prev = ts
            vals = []
            for cell in record[1:]:
                try:
                    v = float(cell)
                except ValueError:
                    raise LoadError(f"row {lineno}: non-numeric or blank cell {cell!r}") from None
                if not math.isfinite(v):
                    raise LoadError(f"row {lineno}: non-finite value {cell!r}")
                vals.append(v)
            stamps.append(record[0].strip())
            rows.append(vals)
    if not rows:
        raise LoadError(f"{path}: no data rows")
    return MultivariateSeries(tuple(stamps), np.asarray(rows, dtype=np.float64), names)


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def resolve_dataset(name_or_path: str) -> tuple[Path, str | None]:
    """Map a registered dataset name or a CSV path to (path, split key)."""
    key = name_or_path.lower()
    if key in FILENAMES:
        return data_dir() / FILENAMES[key], key
    path = Path(name_or_path)
    stem = path.stem.lower()
    return path, stem if stem in SPLITS else None


def split(series: MultivariateSeries, spec: str | Sequence[int]):
    """Contiguous (train, val, test) prefix partitions of fixed lengths."""
    if isinstance(spec, str):
        try:
            counts = SPLITS[spec.lower()]
        except KeyError:
            raise SplitError(f"unknown split {spec!r}; known: {sorted(SPLITS)}") from None
    else:
        counts = tuple(int(c) for c in spec)
        if len(counts) != 3 or min(counts) < 1:
            raise SplitError(f"explicit split needs three positive counts, got {spec}")
    a, b, c = counts
    if a + b + c > series.length:
        raise SplitError(f"split {counts} needs {a + b + c} rows but the series has {series.length}")
    return series.rows(0, a), series.rows(a, a + b), series.rows(a + b, a + b + c)


def num_windows(length: int, n: int, t: int) -> int:
    if n < 1 or t < 1:
        raise WindowError(f"history and horizon must be positive, got n={n}, t={t}")
    if n + t > length:
        raise WindowError(f"n + t = {n + t} exceeds partition length {length}; no windows")
    return length - n - t + 1


def windows(series: MultivariateSeries, n: int, t: int) -> list[WindowSample]:
    count = num_windows(series.length, n, t)
    v = series.values
    return [WindowSample(v[i:i + n], v[i + n:i + n + t], i) for i in range(count)]


def gather_windows(values: np.ndarray, starts: np.ndarray, n: int, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Batch assembly: (B, n, c) histories and (B, t, c) targets."""
    idx = np.asarray(starts)[:, None] + np.arange(n + t)[None, :]
    block = values[idx]
    return block[:, :n], block[:, n:]


def instance_normalize(history: np.ndarray) -> tuple[np.ndarray, NormStats]:
    """Per-channel standardization along the time axis (axis -2).

    Accepts a single (n, c) window or a batch (B, n, c).
    """
    if history.shape[-2] < 2:
        raise WindowError(f"instance norm needs at least 2 time steps, got {history.shape[-2]}")
    mu = history.mean(axis=-2, keepdims=True)
    sd = np.maximum(history.std(axis=-2, keepdims=True), NORM_EPS)
    return (history - mu) / sd, NormStats(mu, sd)


def apply_norm(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return (x - stats.mean) / stats.std


def denormalize(pred: np.ndarray, stats: NormStats) -> np.ndarray:
    return pred * stats.std + stats.mean


def fit_scaler(values: np.ndarray) -> NormStats:
    """Per-channel z-score statistics of a (T, c) training partition.

    Benchmark metrics are reported on series standardized with these
    train-partition statistics.
    """
    mu = values.mean(axis=0)
    sd = np.maximum(values.std(axis=0), NORM_EPS)
    return NormStats(mu, sd)


def synthetic_series(length: int, channels: int, seed: int = 0, start: str = "2016-07-01 00:00:00",
                     freq_minutes: int = 60) -> MultivariateSeries:
    """Seasonal multichannel series with drift and noise, for smoke runs.

    Daily and weekly cycles at hourly sampling, channel-specific phases.
    """
    rng = np.random.default_rng(seed)
    steps = np.arange(length, dtype=np.float64)
    cols = []
    for _ in range(channels):
        daily = rng.uniform(0.5, 2.0) * np.sin(2 * np.pi * steps / 24 + rng.uniform(0, 2 * np.pi))
        weekly = rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * steps / 168 + rng.uniform(0, 2 * np.pi))
        drift = np.cumsum(rng.normal(0, 0.02, length))
        cols.append(rng.uniform(-5, 5) + daily + weekly + drift + rng.normal(0, 0.1, length))
    base = np.datetime64(start.replace(" ", "T"), "m")
    stamps = tuple(str(base + np.timedelta64(freq_minutes * i, "m")).replace("T", " ") + ":00"
                   for i in range(length))
    return MultivariateSeries(stamps, np.stack(cols, axis=1), tuple(f"ch{i}" for i in range(channels)))


@dataclass(frozen=True)
class BenchmarkData:
    """Raw partitions of one dataset plus the train-fitted scaler."""

    name: str
    train: MultivariateSeries
    val: MultivariateSeries
    test: MultivariateSeries
    scaler: NormStats

    @classmethod
    def from_series(cls, name: str, series: MultivariateSeries, spec) -> "BenchmarkData":
        tr, va, te = split(series, spec)
        return cls(name, tr, va, te, fit_scaler(tr.values))


def load_benchmark(name_or_path: str, split_spec=None) -> BenchmarkData:
    path, key = resolve_dataset(name_or_path)
    spec = split_spec if split_spec is not None else key
    if spec is None:
        raise SplitError(f"{name_or_path} is not a registered dataset; pass an explicit (train, val, test) split")
    if key in FILENAMES and not path.is_file():
        raise LoadError(f"no such file: {path} (download {FILENAMES[key]} into ${DATA_DIR_ENV}, default ./data)")
    return BenchmarkData.from_series(key or path.stem, load_csv(path), spec)


def save_csv(series: MultivariateSeries, path: str | os.PathLike) -> None:
    """Write ``series`` in the loader's format (``date`` first, then channels)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *series.channel_names])
        for stamp, row in zip(series.timestamps, series.values):
            w.writerow([stamp, *(repr(float(v)) for v in row)])
