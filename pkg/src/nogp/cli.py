"""Batch experiment driver.

Subcommands write machine-readable tables (JSON lines or CSV) next to a
``<out>.manifest.json`` run manifest recording flags, seeds, library versions
and wall time.  Exit codes: 0 success, 2 usage error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .data_io import (
    DatasetError,
    generate_burgers_standin,
    generate_synthetic,
    load_dataset,
    save_dataset,
    subsample,
)
from .finite_no_sim import (
    hidden_layer_config,
    limit_study_config,
    mc_output_samples,
    random_canonical_input,
    tvd_to_gaussian,
)
from .gp_regress import (
    GpHyperparams,
    NumericalError,
    cross_validate,
    fit_hyperparams,
    load_model,
    save_model,
    write_predictions,
)
from .layer_cov import TruncationError, compose_covariance, fno_architecture, matern_architecture
from .torus_spectral import TorusGrid

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4

logger = logging.getLogger("nogp")


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out or any(v < 1 for v in out):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return out


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return value


def _seeds(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _manifest(path: Path, args: argparse.Namespace, seeds: dict, wall: float, outputs) -> None:
    flags = {k: v for k, v in vars(args).items() if k not in ("func",)}
    data = {
        "command": args.command,
        "flags": flags,
        "seeds": seeds,
        "versions": {"nogp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time_s": wall,
        "outputs": [str(p) for p in outputs],
    }
    Path(str(path) + ".manifest.json").write_text(json.dumps(data, indent=2, default=str))


# --------------------------------------------------------------------------
# commands


def _limit_inputs(band: int, seed: int, count: int):
    gens = _seeds(seed, count + 1)
    f = random_canonical_input(gens[0], band)
    return f, gens[1:]


def cmd_limit_check(args) -> dict:
    """TVD between finite-width output samples at x = 0 and their Gaussian limit."""
    config = limit_study_config(args.band)
    f, gens = _limit_inputs(args.band, args.seed, len(args.widths))
    grid = TorusGrid.anchored_at(0.0, (1,))
    analytic = float(compose_covariance(config, [f], grid).values[0, 0, 0, 0])
    records = []
    for width, rng in zip(args.widths, gens):
        samples = mc_output_samples(config, width, f, 0.0, args.samples, rng)
        records.append({
            "J": width, "n_samples": args.samples, "n_bins": args.bins,
            "tvd": tvd_to_gaussian(samples, 0.0, analytic, args.bins),
            "mc_variance": float(np.var(samples)), "analytic_variance": analytic,
            "seed": args.seed,
        })
        logger.info("J=%d tvd=%.4f", width, records[-1]["tvd"])
    _write_jsonl(args.out, records)
    return {"seed": args.seed}


def cmd_variance_check(args) -> dict:
    """Monte Carlo variance of one FNO layer output at x = 0 against the analytic value."""
    config = hidden_layer_config(args.band)
    f, (rng,) = _limit_inputs(args.band, args.seed, 1)
    grid = TorusGrid.anchored_at(0.0, (1,))
    analytic = float(compose_covariance(config, [f], grid).values[0, 0, 0, 0])
    schedule = sorted(args.samples_schedule)
    samples = mc_output_samples(config, 1, f, 0.0, schedule[-1], rng)
    with open(args.out, "w") as fh:
        fh.write("N,mc_variance,analytic_variance,relative_error\n")
        for n in schedule:
            var = float(np.mean(samples[:n] ** 2))
            fh.write(f"{n},{var!r},{analytic!r},{abs(var - analytic) / analytic!r}\n")
    return {"seed": args.seed}


def _regression_init(args, input_channels: int) -> GpHyperparams:
    if args.model == "fno":
        config = fno_architecture(args.band, input_channels=input_channels)
    else:
        config = matern_architecture(args.nu, args.lengthscale, truncation=args.truncation,
                                     input_channels=input_channels)
    return GpHyperparams(config, args.noise)


def cmd_regress(args) -> dict:
    """Cross-validated GP regression on a dataset file."""
    try:
        ds = load_dataset(args.dataset)
    except (DatasetError, OSError) as exc:
        raise DatasetError(f"{args.dataset}: {exc}") from exc
    if args.n_keep is not None or args.stride != 1:
        ds = subsample(ds, args.n_keep, args.stride, args.seed)
    if args.folds > ds.n:
        raise UsageError(f"--folds {args.folds} exceeds the number of functions ({ds.n})")
    init = (load_model(args.load_model, None) if args.load_model
            else _regression_init(args, ds.in_channels))
    fixed = [name for name in (args.fix or "").split(",") if name]
    start = time.perf_counter()
    cv = cross_validate(ds, init, args.folds, args.seed, args.budget, fixed)
    records = [{"record": "fold", **fr.to_dict()} for fr in cv.folds]
    records.append({"record": "aggregate", "model": args.model, "n": ds.n,
                    "m": list(ds.grid.sizes), **cv.aggregate()})
    outputs = []
    if args.save_predictions:
        write_predictions(args.save_predictions, ds, cv.predictions)
        outputs.append(args.save_predictions)
    if args.save_model:
        fit = fit_hyperparams(ds, init, args.budget, fixed)
        save_model(args.save_model, fit.hyperparams, ds)
        outputs.append(args.save_model)
    _write_jsonl(args.out, records)
    logger.info("regression finished in %.1fs", time.perf_counter() - start)
    return {"seed": args.seed, "dataset_sha256": ds.sha256(), "extra_outputs": outputs}


def cmd_generate(args) -> dict:
    """Write a generated dataset file."""
    if args.kind == "synthetic":
        ds = generate_synthetic(args.seed, args.truth_seed, args.n, args.band)
        seeds = {"seed": args.seed, "truth_seed": args.truth_seed}
    else:
        ds = generate_burgers_standin(args.seed, args.n, args.m)
        seeds = {"seed": args.seed}
    save_dataset(ds, args.out)
    return seeds


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nogp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("limit-check", help="TVD of finite-width outputs against the Gaussian limit")
    p.add_argument("--widths", type=_int_list, default=[1, 10, 100, 1000])
    p.add_argument("--samples", type=_positive_int, default=10_000)
    p.add_argument("--band", type=_nonneg_int, default=3)
    p.add_argument("--bins", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_limit_check)

    p = sub.add_parser("variance-check", help="Monte Carlo variance against the analytic value")
    p.add_argument("--samples-schedule", type=_int_list, default=[100, 1000, 10_000, 100_000])
    p.add_argument("--band", type=_nonneg_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_variance_check)

    p = sub.add_parser("regress", help="cross-validated GP regression on a dataset file")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--model", choices=("fno", "matern"), default="fno")
    p.add_argument("--band", type=_nonneg_int, default=5)
    p.add_argument("--nu", default="2.5", help="Matern smoothness (a number or 'inf')")
    p.add_argument("--lengthscale", type=_positive_float, default=1.0)
    p.add_argument("--truncation", type=_positive_int, default=128)
    p.add_argument("--noise", type=_positive_float, default=1e-3, help="initial noise variance")
    p.add_argument("--fix", default="", help="comma-separated hyperparameter names to hold fixed")
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--budget", type=_positive_int, default=30)
    p.add_argument("--n-keep", type=_positive_int, default=None)
    p.add_argument("--stride", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-predictions", type=Path, default=None)
    p.add_argument("--save-model", type=Path, default=None)
    p.add_argument("--load-model", type=Path, default=None,
                   help="start from saved hyperparameters instead of the defaults")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("generate", help="write a generated dataset file")
    p.add_argument("--kind", choices=("synthetic", "burgers"), default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth-seed", type=int, default=1)
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--band", type=_nonneg_int, default=5, help="synthetic band-limit")
    p.add_argument("--m", type=_positive_int, default=103, help="Burgers grid size")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "regress" and args.model == "matern":
        try:
            float(str(args.nu).replace("infinity", "inf"))
        except ValueError:
            parser.error(f"--nu must be a number or 'inf', got {args.nu!r}")
    start = time.perf_counter()
    try:
        seeds = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nogp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError) as exc:
        print(f"nogp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, TruncationError) as exc:
        print(f"nogp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _manifest(args.out, args, seeds, time.perf_counter() - start, [args.out])
    return 0


if __name__ == "__main__":
    sys.exit(main())
