"""Command-line entry point: ``mogan run``, ``mogan sweep`` and ``mogan plot``.

Config files are TOML. Top-level keys are :class:`~mogan.gan.TrainConfig`
fields (``method``, ``num_discriminators``, ``delta``, ``beta``, ``epochs``,
``steps_per_epoch``, ``batch_size``, ``seed``, ...) plus ``out_dir``; ring
data lives in a ``[data]`` table and sweep axes in a ``[sweep]`` table with
``methods``, ``num_discriminators``, ``deltas`` and ``seeds`` lists. Command
line flags override file values.

Exit codes: 0 success, 1 configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import gan
from .errors import NumericError
from .runner import (
    SweepSpec,
    TrainingFailure,
    config_from_dict,
    emit_plots,
    load_record,
    run_experiment,
    run_sweep,
    spread_by,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

# flag dest -> config key
RUN_FLAGS = {
    "method": "method",
    "num_discriminators": "num_discriminators",
    "delta": "delta",
    "beta": "beta",
    "epochs": "epochs",
    "steps_per_epoch": "steps_per_epoch",
    "batch_size": "batch_size",
    "seed": "seed",
}
SWEEP_FLAGS = {
    "methods": "methods",
    "ks": "num_discriminators",
    "deltas": "deltas",
    "seeds": "seeds",
}


class ConfigError(ValueError):
    pass


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def build_train_config(file_values: dict, overrides: dict) -> gan.TrainConfig:
    values = {k: v for k, v in file_values.items() if k not in ("out_dir", "sweep")}
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(gan.TrainConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return config_from_dict(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _csv_list(cast):
    def parse(text: str):
        return [cast(x) for x in text.split(",") if x.strip()]

    return parse


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--out-dir", type=Path, help="root directory for run outputs (default: runs)")
    p.add_argument("--method", choices=gan.METHODS)
    p.add_argument("--num-discriminators", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-plots", action="store_true", help="skip plot emission")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mogan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration")
    _add_run_flags(run)

    sweep = sub.add_parser("sweep", help="train every (method, K, delta, seed) cell")
    _add_run_flags(sweep)
    sweep.add_argument("--methods", type=_csv_list(str), help="comma-separated, e.g. hv,avg")
    sweep.add_argument("--ks", type=_csv_list(int), help="comma-separated discriminator counts")
    sweep.add_argument("--deltas", type=_csv_list(float), help="comma-separated slack values")
    sweep.add_argument("--seeds", type=_csv_list(int), help="comma-separated seeds")
    sweep.add_argument("--workers", type=int, help="parallel worker processes")

    plot = sub.add_parser("plot", help="render plots for existing run directories")
    plot.add_argument("run_dirs", nargs="+", type=Path)
    plot.add_argument("--out-dir", type=Path, required=True)
    return parser


def _resolve(args) -> tuple[dict, gan.TrainConfig, Path]:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {key: getattr(args, dest) for dest, key in RUN_FLAGS.items()}
    config = build_train_config(file_values, overrides)
    out_dir = args.out_dir or Path(file_values.get("out_dir", "runs"))
    return file_values, config, out_dir


def _cmd_run(args) -> int:
    _, config, out_dir = _resolve(args)
    try:
        record = run_experiment(config, out_dir)
    except TrainingFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    run_dir = out_dir / record.run_id
    if record.rows and not args.no_plots:
        emit_plots([record], run_dir / "plots")
    if record.rows:
        last = record.rows[-1]
        print(f"{record.run_id}: epochs={len(record.rows)} frechet={last['frechet']:.4g} "
              f"modes={last['modes_covered']} residual={last['residual']:.4g}")
    else:
        print(f"{record.run_id}: no epochs run")
    print(f"outputs in {run_dir}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    file_values, config, out_dir = _resolve(args)
    sweep_values = dict(file_values.get("sweep", {}))
    for dest, key in SWEEP_FLAGS.items():
        if getattr(args, dest) is not None:
            sweep_values[key] = getattr(args, dest)
    unknown = sorted(set(sweep_values) - set(SWEEP_FLAGS.values()))
    if unknown:
        raise ConfigError(f"unknown sweep keys: {', '.join(unknown)}")
    try:
        spec = SweepSpec(
            methods=tuple(sweep_values.get("methods", [config.method])),
            num_discriminators=tuple(sweep_values.get("num_discriminators", [config.num_discriminators])),
            deltas=tuple(sweep_values.get("deltas", [config.delta])),
            seeds=tuple(sweep_values.get("seeds", [config.seed])),
            base=config,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = run_sweep(spec, out_dir, workers=args.workers)
    for row in result.summary:
        print(f"{row['method']:>5} K={row['num_discriminators']:<3} delta={row['delta']:<5g} "
              f"runs={row['runs']} failed={row['failed']} "
              f"frechet={row['frechet_mean']:.4g}±{row['frechet_std']:.3g} modes={row['modes_mean']:.2f}")
    for k, stats in spread_by(result.records).items():
        print(f"K={k}: final Frechet spread (std over delta x seed) = {stats['std']:.4g} (n={stats['n']})")
    if not args.no_plots:
        plotted = [r for r in result.records if r.rows and r.final_samples is not None]
        for r in plotted:
            emit_plots([r], out_dir / r.run_id / "plots")
    failed = sum(row["failed"] for row in result.summary)
    return EXIT_NUMERIC if failed else EXIT_OK


def _cmd_plot(args) -> int:
    records = [load_record(d) for d in args.run_dirs]
    for path in emit_plots(records, args.out_dir):
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_plot(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
