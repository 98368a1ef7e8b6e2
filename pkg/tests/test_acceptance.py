"""Acceptance criteria, one PASS/FAIL line each.

Criteria 1, 2 and 7 need the benchmark CSVs (ETTh1.csv, ETTm2.csv) under
$SEMIXER_DATA_DIR (default ./data) and fail when they are absent.  Trained
checkpoints are cached in $SEMIXER_ACCEPTANCE_DIR (default ./acceptance_runs)
so an interrupted run resumes where it stopped.

Run standalone with ``python tests/test_acceptance.py`` for a plain report.
"""

from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
import pytest

from semixer.ablation import run_ablation_matrix
from semixer.dataio import BenchmarkData, data_dir, load_benchmark, resolve_dataset, synthetic_series
from semixer.evaluation import ForecastReport
from semixer.mpmc import ModelConfig, init_params, save_checkpoint
from semixer.training import TrainConfig, train
from semixer.verification import (check_model_gradient, check_patch_counts, check_ram_expectation,
                                  check_round_trip)

N, T = 512, 96
SEEDS = (0, 1, 2)
EPS = (0.0, 0.1, 0.3)
HEADLINE_BOUND = 0.40
RUNTIME_BUDGET = 45 * 60
RUNS = Path(os.environ.get("SEMIXER_ACCEPTANCE_DIR", Path(__file__).resolve().parents[1] / "acceptance_runs"))

# printed again as a block by the terminal-summary hook in conftest.py
ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({title}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def _benchmark(name: str) -> BenchmarkData | None:
    path, _ = resolve_dataset(name)
    return load_benchmark(name) if path.is_file() else None


def _missing(name: str) -> str:
    return f"{resolve_dataset(name)[0]} not found (set SEMIXER_DATA_DIR; searched {data_dir()})"


_matrices: dict[tuple, list[ForecastReport]] = {}


def _matrix(name: str, variants: tuple[str, ...], eps: tuple[float, ...]) -> tuple[list[ForecastReport], float]:
    """Full-protocol run matrix; returns reports and mean training seconds per new run."""
    key = (name, variants, eps)
    if key not in _matrices:
        data = load_benchmark(name)
        start = time.perf_counter()
        reports = run_ablation_matrix(data, N, T, variants, eps, TrainConfig(epochs=30), SEEDS,
                                      out_dir=RUNS / name)
        _matrices[key] = reports
        _matrices[key + ("seconds",)] = (time.perf_counter() - start) / (len(variants) * len(SEEDS))
    return _matrices[key], _matrices[key + ("seconds",)]


def _mean(reports, variant, eps=0.0) -> float:
    return float(np.mean([r.mse for r in reports if r.variant == variant and r.noise_eps == eps]))


def test_criterion_1_etth1_headline():
    data = _benchmark("etth1")
    if data is None:
        report(1, "ETTh1 n=512 t=96 mean test MSE <= 0.40", False, _missing("etth1"))
        pytest.fail(_missing("etth1"))
    reports, seconds = _matrix("etth1", ("full", "no_ram", "no_mpmc", "sam"), EPS)
    mses = [r.mse for r in reports if r.variant == "full" and r.noise_eps == 0.0]
    mean = float(np.mean(mses))
    ok = mean <= HEADLINE_BOUND
    report(1, "ETTh1 n=512 t=96 mean test MSE <= 0.40", ok,
           f"seeds {list(SEEDS)} MSE {[round(m, 4) for m in mses]} mean {mean:.4f} "
           f"(published 0.365); {seconds / 60:.1f} min per run (budget {RUNTIME_BUDGET // 60})")
    assert ok


def test_criterion_2_ablation_ordering():
    missing = [n for n in ("etth1", "ettm2") if _benchmark(n) is None]
    if missing:
        msg = "; ".join(_missing(n) for n in missing)
        report(2, "full <= w/o RAM and full <= w/o MPMC", False, msg)
        pytest.fail(msg)
    parts, ok = [], True
    for name in ("etth1", "ettm2"):
        variants = ("full", "no_ram", "no_mpmc", "sam") if name == "etth1" else ("full", "no_ram", "no_mpmc")
        eps = EPS if name == "etth1" else (0.0,)
        reports, _ = _matrix(name, variants, eps)
        full, no_ram, no_mpmc = (_mean(reports, v) for v in ("full", "no_ram", "no_mpmc"))
        ok &= full <= no_ram and full <= no_mpmc
        parts.append(f"{name}: full {full:.4f} w/o RAM {no_ram:.4f} w/o MPMC {no_mpmc:.4f}")
    report(2, "full <= w/o RAM and full <= w/o MPMC", ok, "; ".join(parts))
    assert ok


def test_criterion_3_ram_expectation():
    r = check_ram_expectation(0)
    ok = r.passed and r.seconds < 10
    report(3, "RAM expectation equivalence < 2%, < 10 s", ok, f"{r.detail}, {r.seconds:.2f}s")
    assert ok


def test_criterion_4_gradient():
    r = check_model_gradient(0)
    ok = r.passed and r.seconds < 60
    report(4, "end-to-end finite differences < 1e-4, < 60 s", ok,
           f"n=64 N1=8 S=2 c=2 t=8, {r.detail}, {r.seconds:.2f}s")
    assert ok


def test_criterion_5_patch_arithmetic():
    r = check_patch_counts(512)
    report(5, "patch counts 64/32/16/8, total 120", r.passed, r.detail)
    assert r.passed


def test_criterion_6_round_trip():
    r = check_round_trip(0)
    report(6, "instance-norm round trip to 1e-9", r.passed, r.detail)
    assert r.passed


def test_criterion_7_noise_monotonicity():
    if _benchmark("etth1") is None:
        report(7, "MSE non-decreasing in eps; full degrades <= w/o MPMC", False, _missing("etth1"))
        pytest.fail(_missing("etth1"))
    variants = ("full", "no_ram", "no_mpmc", "sam")
    reports, _ = _matrix("etth1", variants, EPS)
    ok, parts = True, []
    for v in variants:
        curve = [_mean(reports, v, e) for e in EPS]
        ok &= curve[0] <= curve[1] <= curve[2]
        parts.append(f"{v} " + "/".join(f"{m:.4f}" for m in curve))
    rise = {v: _mean(reports, v, 0.3) / _mean(reports, v, 0.0) - 1 for v in ("full", "no_mpmc")}
    ok &= rise["full"] <= rise["no_mpmc"]
    report(7, "MSE non-decreasing in eps; full degrades <= w/o MPMC", ok,
           "; ".join(parts) + f"; rise at 0.3: full {rise['full']:+.2%} w/o MPMC {rise['no_mpmc']:+.2%}")
    assert ok


def _determinism_run(data: BenchmarkData, cfg: TrainConfig, path: Path) -> bytes:
    config = ModelConfig(n=N, t=T, c=data.train.channels)
    params, _ = train(init_params(config, cfg.seed), data.train, data.val, cfg, data.scaler)
    save_checkpoint(params, path)
    return path.read_bytes()


def test_criterion_8_determinism(tmp_path):
    data = _benchmark("etth1")
    source = "ETTh1"
    if data is None:
        # same shape as ETTh1: 7 channels, hourly stamps
        data = BenchmarkData.from_series("synthetic", synthetic_series(2600, 7, seed=11), (1200, 700, 700))
        source = "synthetic 7-channel series (ETTh1 absent)"
    if os.environ.get("SEMIXER_ACCEPTANCE_FULL"):
        cfg, budget = TrainConfig(epochs=30, seed=0), "30 epochs, every batch"
    else:
        cfg, budget = TrainConfig(epochs=3, max_batches=4, seed=0), "3 epochs x 4 batches"
    start = time.perf_counter()
    a = _determinism_run(data, cfg, tmp_path / "a.semx")
    b = _determinism_run(data, cfg, tmp_path / "b.semx")
    ok = a == b
    weights = init_params(ModelConfig(n=N, t=T), 0).num_parameters()
    report(8, "identical seeds give byte-identical checkpoints", ok,
           f"default model (D=128, {weights:,} weights), {source}, {budget}; "
           f"{len(a)} bytes {'identical' if ok else 'DIFFER'} ({time.perf_counter() - start:.0f}s)")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
