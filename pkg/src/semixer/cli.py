"""Command-line entry point: train, eval, ablate, verify, data-info."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .ablation import checkpoint_name, run_ablation_matrix
from .dataio import SPLITS, load_benchmark, num_windows
from .encoder import build_scale_specs
from .errors import (CheckpointError, ConfigError, LoadError, SemixerError, SplitError,
                     TrainingError, WindowError)
from .evaluation import NOISE_MODES, evaluate, write_reports
from .mpmc import VARIANTS, ModelConfig, init_params, load_checkpoint, save_checkpoint
from .training import LOSS_SPACES, TrainConfig, train
from .verification import run_all

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("semixer")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def read_config_file(path: str) -> dict[str, str]:
    """``key=value`` per line; ``#`` starts a comment; keys use flag names."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default="etth1", help=f"registered name ({', '.join(SPLITS)}) or CSV path")
    p.add_argument("--split", type=_ints, default=None, help="explicit train,val,test lengths")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=512, help="input length")
    p.add_argument("--t", type=int, default=96, help="forecast horizon")
    p.add_argument("--D", dest="d_model", type=int, default=128)
    p.add_argument("--N1", dest="n1", type=int, default=64)
    p.add_argument("--S", dest="scales", type=int, default=None)
    p.add_argument("--alphas", type=_ints, default=None, help="scale factors, default 2,4,8")
    p.add_argument("--p", type=float, default=0.85)
    p.add_argument("--integrate-dim", type=int, default=64)


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--no-clip", action="store_true", help="disable gradient clipping")
    p.add_argument("--max-batches", type=int, default=None, help="cap batches per epoch")
    p.add_argument("--loss-space", choices=LOSS_SPACES, default="instance")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semixer", description=__doc__)
    parser.add_argument("--config", help="key=value file supplying defaults for any flag")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model and write checkpoint + history")
    _add_data_args(p)
    _add_model_args(p)
    _add_train_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument("--out", default="runs")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test partition")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eps", type=float, default=0.0, help="noise magnitude on test histories")
    p.add_argument("--noise-mode", choices=NOISE_MODES, default="uniform")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs")

    p = sub.add_parser("ablate", help="variant x noise x seed run matrix")
    _add_data_args(p)
    _add_model_args(p)
    _add_train_args(p)
    p.add_argument("--variants", default="full,no_ram,no_mpmc,sam")
    p.add_argument("--eps", type=_floats, default=[0.0, 0.1, 0.3])
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    p.add_argument("--noise-mode", choices=NOISE_MODES, default="uniform")
    p.add_argument("--retrain", action="store_true", help="ignore existing checkpoints")
    p.add_argument("--out", default="runs")

    p = sub.add_parser("verify", help="run the built-in oracle checks")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("data-info", help="summarize a dataset and its partitions")
    _add_data_args(p)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--t", type=int, default=96)

    parser._subparsers_map = sub.choices
    return parser


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        subparser = parser._subparsers_map[args.command]
        known = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, raw in values.items():
            action = known.get(key) or next((a for a in known.values()
                                             if key in [o.lstrip("-").replace("-", "_") for o in a.option_strings]),
                                            None)
            if action is None:
                raise ConfigError(f"config file key {key!r} is not an option of '{args.command}'")
            if action.const is True and action.nargs == 0:
                defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[action.dest] = action.type(raw) if action.type else raw
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _alphas(args) -> tuple[int, ...]:
    if args.alphas is not None:
        alphas = tuple(args.alphas)
        if args.scales is not None and args.scales != len(alphas) + 1:
            raise ConfigError(f"--S {args.scales} disagrees with {len(alphas)} scale factors")
        return alphas
    if args.scales is None:
        return (2, 4, 8)
    return tuple(2 ** k for k in range(1, args.scales))


def model_kwargs(args) -> dict:
    alphas = _alphas(args)
    build_scale_specs(args.n, args.n1, len(alphas) + 1, alphas)
    return dict(d_model=args.d_model, n1=args.n1, alphas=alphas, p=args.p, integrate_dim=args.integrate_dim)


def train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       patience=args.patience, seed=seed, clip_norm=None if args.no_clip else 5.0,
                       max_batches=args.max_batches, loss_space=args.loss_space)


def cmd_train(args) -> int:
    kwargs = model_kwargs(args)
    cfg = train_config(args, args.seed)
    data = load_benchmark(args.dataset, args.split)
    config = ModelConfig(n=args.n, t=args.t, c=data.train.channels, variant=args.variant, **kwargs)
    params, history = train(init_params(config, args.seed), data.train, data.val, cfg, data.scaler)
    out = Path(args.out)
    name = checkpoint_name(data.name, args.n, args.t, args.variant, args.seed)
    save_checkpoint(params, out / "checkpoints" / f"{name}.semx")
    history.to_csv(out / "history" / f"{name}.csv")
    print(f"best epoch {history.best_epoch}: validation MSE {history.best_val:.6f}")
    print(f"checkpoint: {out / 'checkpoints' / f'{name}.semx'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    cfg = params.config
    data = load_benchmark(args.dataset, args.split)
    if data.train.channels != cfg.c:
        raise ConfigError(f"checkpoint expects {cfg.c} channels, dataset has {data.train.channels}")
    report = evaluate(params, data.test.values, cfg.n, cfg.t, scaler=data.scaler, dataset=data.name,
                      seed=args.seed, noise_eps=args.eps, noise_mode=args.noise_mode)
    stem = Path(args.out) / "reports" / f"eval_{Path(args.checkpoint).stem}_eps{args.eps:g}".replace(".", "p")
    write_reports([report], stem.with_suffix(".csv"), stem.with_suffix(".json"))
    print(f"{report.dataset} n={report.n} t={report.t} variant={report.variant} eps={report.noise_eps:g} "
          f"mse={report.mse:.6f} mae={report.mae:.6f} windows={report.num_windows}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    kwargs = model_kwargs(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    data = load_benchmark(args.dataset, args.split)
    reports = run_ablation_matrix(data, args.n, args.t, variants, args.eps, train_config(args, 0), args.seeds,
                                  model_kwargs=kwargs, out_dir=args.out, reuse=not args.retrain,
                                  noise_mode=args.noise_mode)
    for r in reports:
        print(f"{r.variant:8s} seed={r.seed} eps={r.noise_eps:<4g} mse={r.mse:.6f} mae={r.mae:.6f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all(args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_data_info(args) -> int:
    data = load_benchmark(args.dataset, args.split)
    print(f"dataset {data.name}: {data.train.channels} channels {list(data.train.channel_names)}")
    for label, part in (("train", data.train), ("val", data.val), ("test", data.test)):
        try:
            count = num_windows(part.length, args.n, args.t)
        except WindowError:
            count = 0
        print(f"  {label:5s} rows={part.length:6d} {part.timestamps[0]} .. {part.timestamps[-1]} "
              f"windows(n={args.n}, t={args.t})={count}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "verify": cmd_verify, "data-info": cmd_data_info}


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except (ConfigError, ValueError) as exc:
        print(f"semixer: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SplitError) as exc:
        print(f"semixer: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"semixer: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (LoadError, TrainingError, SemixerError, OSError) as exc:
        print(f"semixer: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
