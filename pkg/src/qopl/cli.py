"""Command-line entry point: ``qopl run | plot | gen-data``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .dgp import (AppendixConfig, DgpConfig, NcDgpConfig, generate_appendix_dataset,
                  generate_iv_dataset, generate_nc_dataset, write_dataset_csv)
from .errors import ConfigurationError, NumericalError
from .harness import (ExperimentConfig, METHODS, load_experiment_config, read_csv,
                      read_key_values, run_experiment, write_csv)
from .plotting import plot_curves

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("qopl")


def _cmd_run(args) -> int:
    config = load_experiment_config(args.config) if args.config else ExperimentConfig()
    if args.preset:
        config = config.with_preset(args.preset)
    overrides = {}
    if args.methods:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.out_csv:
        overrides["out_csv"] = args.out_csv
    if args.out_plots:
        overrides["out_plots"] = args.out_plots
    config = replace(config, **overrides)
    config.validate()
    curve = run_experiment(config)
    write_csv(curve, config.out_csv or sys.stdout)
    if config.out_plots and curve.rows:
        plot_curves(curve, config.out_plots)
    rate = curve.worst_failure_rate()
    if rate > config.failure_budget:
        log.error("failure rate %.1f%% exceeds budget %.1f%%", 100 * rate,
                  100 * config.failure_budget)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_plot(args) -> int:
    for path in plot_curves(read_csv(args.in_csv), args.out_dir):
        log.info("wrote %s", path)
    return EXIT_OK


_GEN_KINDS = {"iv": DgpConfig, "appendix": AppendixConfig, "nc": NcDgpConfig}


def _cmd_gen_data(args) -> int:
    values = read_key_values(args.config)
    kind = values.pop("kind", "iv")
    if kind not in _GEN_KINDS:
        raise ConfigurationError(f"unknown kind {kind!r}; expected one of {sorted(_GEN_KINDS)}")
    cls = _GEN_KINDS[kind]
    kwargs = {}
    for key, text in values.items():
        field_type = cls.__dataclass_fields__.get(key)
        if field_type is None:
            raise ConfigurationError(f"unknown key {key!r} for kind {kind!r}")
        try:
            if key == "beta_true":
                kwargs[key] = tuple(float(v) for v in text.split(","))
            elif key in ("n", "seed"):
                kwargs[key] = int(text)
            else:
                kwargs[key] = float(text)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key!r}: {text!r}") from exc
    if "n" not in kwargs:
        raise ConfigurationError("gen-data config requires n")
    if kind == "iv":
        kwargs.setdefault("alpha", 0.2)
        dataset = generate_iv_dataset(DgpConfig(**kwargs))
    elif kind == "nc":
        kwargs.setdefault("alpha", 0.2)
        dataset = generate_nc_dataset(NcDgpConfig(**kwargs))
    else:
        kwargs.pop("beta_true", None)
        kwargs.pop("rho", None)
        dataset = generate_appendix_dataset(**kwargs)
    write_dataset_csv(dataset, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qopl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the regret experiment grid")
    run.add_argument("--config", help="key = value experiment config file")
    run.add_argument("--preset", choices=["desk", "full"])
    run.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    run.add_argument("--out-csv")
    run.add_argument("--out-plots", help="directory for SVG figures")
    run.add_argument("--workers", type=int)
    run.add_argument("--seed", type=int, help="base seed")
    run.set_defaults(func=_cmd_run)

    plot = sub.add_parser("plot", help="render SVG figures from a regret CSV")
    plot.add_argument("--in-csv", required=True)
    plot.add_argument("--out-dir", required=True)
    plot.set_defaults(func=_cmd_plot)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
