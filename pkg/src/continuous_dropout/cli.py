#!/usr/bin/env python3
"""Command-line entry point for continuous-dropout analyses and experiments."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__, config
from .activations import ActivationKind
from .coadapt import histogram, pair_covariances, shared_bins, zero_bin_fraction
from .data import Dataset, load_mnist, split, synthetic_gaussian_blobs
from .dynamics import (
    expected_dropout_error_linear,
    expected_gradient_linear,
    mc_dropout_error_linear,
    mc_expected_gradient,
    mc_sigmoidal_excess,
    sigmoidal_regularizer,
)
from .errors import ConfigError, ContinuousDropoutError, NumericError, OracleDisagreementError, ValidationError
from .masks import MaskDistribution, MomentMode, RngStream, parse_spec
from .network import LossKind, NetSpec, save_network
from .reports import save_records, write_csv
from .statics import approximation_error_grid, linear_output_moments, mc_output_moments, normality_diagnostic
from .train import TrainConfig, compare_methods, dist_label, train, variance_sweep
from .verify import VerifyScale, format_table, run_all

logger = logging.getLogger(__name__)

DEFAULT_LAWS = ("bernoulli:p=0.5", "uniform", "gaussian:mu=0.5,var=0.2")
DEFAULT_MEASURE_DROPOUT = "gaussian:mu=0.5,var=0.2"

# stream ids under --seed
_STATIC_STREAM = 21
_DYNAMIC_STREAM = 22
_COV_STREAM = 23


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as :class:`ConfigError`."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def _dropouts(args, default: Sequence[str]) -> list[Optional[MaskDistribution]]:
    texts = args.dropout or list(default)
    out = []
    for text in texts:
        out.append(None if text.strip().lower() == "none" else parse_spec(text))
    return out


def _stochastic(dists: list[Optional[MaskDistribution]]) -> list[MaskDistribution]:
    if any(d is None for d in dists):
        raise ConfigError("'none' is only meaningful for training commands")
    return dists  # type: ignore[return-value]


def _common_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed; fixes every random stream (default 0)")
    common.add_argument("--out-dir", help=f"output directory (default ${config.OUT_DIR_ENV} or ./results)")
    common.add_argument(
        "--dropout",
        action="append",
        help="mask law, e.g. bernoulli:p=0.5, uniform, gaussian:mu=0.5,var=0.2 or none; repeatable",
    )
    common.add_argument("--mnist-dir", help=f"directory with the MNIST IDX files (default ${config.MNIST_DIR_ENV})")
    common.add_argument("--samples", type=int, help="Monte-Carlo sample count")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
    common.add_argument("--workers", type=int, help=f"worker threads (default ${config.THREADS_ENV} or CPU count)")
    return common


def _training_parser() -> argparse.ArgumentParser:
    group = _Parser(add_help=False)
    group.add_argument("--config", help="training settings file (.toml or .json)")
    group.add_argument("--dataset", choices=("mnist", "blobs"), default="mnist")
    group.add_argument("--train-count", type=int, default=config.DEFAULT_TRAIN_COUNT, help="training examples")
    group.add_argument("--full-scale", action="store_true", help="use 800-unit hidden layers")
    group.add_argument("--layers", help="comma separated layer sizes, e.g. 784,128,128,10")
    group.add_argument("--hidden-activation", choices=("relu", "sigmoid"), default="relu")
    group.add_argument("--epochs", type=int)
    group.add_argument("--batch-size", type=int)
    group.add_argument("--lr", type=float, help="initial learning rate")
    group.add_argument("--maxnorm", type=float, help="max-norm radius (inf disables)")
    group.add_argument("--input-dropout", help="mask law on the raw input")
    group.add_argument("--blob-dim", type=int, default=20)
    group.add_argument("--blob-classes", type=int, default=4)
    group.add_argument("--blob-per-class", type=int, default=250)
    group.add_argument("--data-seed", type=int, default=0, help="seed of the train/validation split and blobs")
    return group


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    training = _training_parser()
    parser = _Parser(prog=config.APP_NAME, description="Continuous dropout analyses and experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    static = sub.add_parser("analyze-static", parents=[common], help="layer output moments, closed form vs MC")
    static.add_argument("--inputs", type=int, default=8, help="inputs of the random layer")
    static.add_argument("--outputs", type=int, default=8, help="outputs of the random layer")

    dynamic = sub.add_parser("analyze-dynamic", parents=[common], help="error decomposition and expected gradients")
    dynamic.add_argument("--inputs", type=int, default=8, help="inputs of the random unit")

    cov = sub.add_parser("covhist", parents=[common, training], help="pair covariance histograms of trained nets")
    cov.add_argument("--layer", type=int, action="append", help="layer index to analyse; repeatable")
    cov.add_argument("--n-inputs", type=int, default=config.DEFAULT_COV_INPUTS)
    cov.add_argument("--repeats", type=int, default=config.DEFAULT_COV_REPEATS)
    cov.add_argument("--bins", type=int, default=config.DEFAULT_COV_BINS)
    cov.add_argument(
        "--measure-dropout", default=DEFAULT_MEASURE_DROPOUT, help="noise for networks trained without dropout"
    )

    one = sub.add_parser("train", parents=[common, training], help="train one network")
    one.add_argument("--save-defaults", action="store_true", help="store the resolved settings in config.json")

    compare = sub.add_parser("compare", parents=[common, training], help="paired multi-run comparison")
    compare.add_argument("--runs", type=int, default=5)

    sweep = sub.add_parser("sweep", parents=[common, training], help="clipped-Gaussian variance sweep")
    sweep.add_argument("--grid", help="comma separated variances")
    sweep.add_argument("--runs", type=int, default=1, help="seeds per variance")
    sweep.add_argument("--mu", type=float, default=0.5)

    check = sub.add_parser("verify", parents=[common], help="closed-form vs oracle suites")
    check.add_argument("--instances", type=int, default=100, help="random instances per suite")
    check.add_argument("--networks", type=int, default=20, help="random networks for the gradient check")
    return parser


# --- training plumbing ---
def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _train_config(args, **fixed) -> TrainConfig:
    """Settings from config.json, then ``--config``, then flags, then ``fixed``.

    ``--seed`` and ``--input-dropout`` only override the files when given.
    """
    settings = dict(config.load_config().get("train", {}))
    if args.config:
        settings.update(TrainConfig.load(args.config).to_dict())
    cfg = TrainConfig.from_dict(settings)
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr_initial": args.lr,
        "maxnorm_c": args.maxnorm,
        "seed": args.seed,
    }
    changes = {k: v for k, v in overrides.items() if v is not None}
    if args.input_dropout:
        changes["input_dropout"] = parse_spec(args.input_dropout)
    changes.update(fixed)
    return cfg.with_updates(**changes)


def _datasets(args) -> tuple[Dataset, Dataset, Optional[Dataset]]:
    if args.dataset == "blobs":
        full = synthetic_gaussian_blobs(args.blob_per_class, args.blob_classes, args.blob_dim, 4.0, args.data_seed)
        test = synthetic_gaussian_blobs(args.blob_per_class, args.blob_classes, args.blob_dim, 4.0, args.data_seed + 1)
        n_train = max(1, int(0.8 * len(full)))
        ds_train, ds_val = split(full, n_train, args.data_seed)
        return ds_train, ds_val, test
    mnist_dir = args.mnist_dir or config.get_mnist_dir()
    if not mnist_dir:
        raise ConfigError(f"no MNIST directory; pass --mnist-dir or set {config.MNIST_DIR_ENV}")
    full = load_mnist(mnist_dir, "train")
    ds_train, ds_val = split(full, args.train_count, args.data_seed)
    return ds_train, ds_val, load_mnist(mnist_dir, "test")


def _net_spec(args, ds: Dataset) -> NetSpec:
    if args.layers:
        try:
            sizes = tuple(int(n) for n in args.layers.split(","))
        except ValueError as exc:
            raise ConfigError(f"invalid --layers {args.layers!r}") from exc
    elif args.dataset == "blobs":
        sizes = (ds.dim, 32, 32, ds.n_classes)
    else:
        sizes = config.FULL_LAYER_SIZES if args.full_scale else config.DESK_LAYER_SIZES
    return NetSpec(sizes, hidden_activation=ActivationKind(args.hidden_activation))


def _write(report_records: list, path_stem: str, fmt: str, frame: Optional[pd.DataFrame] = None) -> str:
    if fmt == "csv" and frame is not None:
        path = path_stem + ".csv"
        write_csv(frame, path)
    else:
        path = path_stem + ".json"
        save_records(report_records, path)
    return path


# --- subcommands ---
def cmd_analyze_static(args, out_dir: str) -> int:
    root = RngStream(_seed(args), _STATIC_STREAM)
    gen = root.substream(0).generator()
    W = gen.normal(size=(args.outputs, args.inputs))
    I = gen.uniform(0.0, 1.0, size=args.inputs)
    n_samples = args.samples or config.DEFAULT_MC_SAMPLES
    for index, dist in enumerate(_stochastic(_dropouts(args, DEFAULT_LAWS))):
        closed = linear_output_moments(W, I, dist, MomentMode.EFFECTIVE)
        mc = mc_output_moments(W, I, dist, n_samples, root.substream(1 + index), args.workers)
        ks = normality_diagnostic(W, I, dist, min(n_samples, 100_000), root.substream(1000 + index))
        logger.info(f"{dist_label(dist)}: KS distance of S from normal, worst {max(ks):.4f}")
        frame = pd.DataFrame(
            {
                "output": np.arange(W.shape[0]),
                "expected_closed": closed.expected,
                "expected_mc": mc.expected,
                "variance_closed": closed.variance,
                "variance_mc": mc.variance,
                "variance_mc_se": np.diag(mc.standard_error),
            }
        )
        path = _write([closed, mc], os.path.join(out_dir, f"moments_{_slug(dist_label(dist))}"), args.format, frame)
        print(f"{dist_label(dist)}: wrote {path}")
    grid_path = os.path.join(out_dir, "sigmoid_approximation.csv")
    grid = approximation_error_grid()
    write_csv(grid, grid_path)
    print(f"sigmoid approximation: max abs error {grid['abs_error'].max():.4f}, wrote {grid_path}")
    return 0


def cmd_analyze_dynamic(args, out_dir: str) -> int:
    root = RngStream(_seed(args), _DYNAMIC_STREAM)
    gen = root.substream(0).generator()
    w = gen.normal(size=args.inputs)
    I = gen.uniform(0.0, 1.0, size=args.inputs)
    t_linear = float(gen.normal())
    t_sigmoid = float(gen.uniform(0.0, 1.0))
    n_samples = args.samples or config.DEFAULT_MC_SAMPLES
    rows = []
    for index, dist in enumerate(_stochastic(_dropouts(args, DEFAULT_LAWS))):
        streams = root.substream(1 + index)
        decomposition = expected_dropout_error_linear(w, I, t_linear, dist, MomentMode.NOMINAL)
        oracle = mc_dropout_error_linear(w, I, t_linear, dist, n_samples, streams.substream(0), args.workers)
        decomposition.with_oracle(oracle)
        gradient = expected_gradient_linear(w, I, t_linear, dist, MomentMode.NOMINAL)
        mc_gradient = mc_expected_gradient(
            w, I, t_linear, dist, LossKind.QUADRATIC, n_samples, streams.substream(1), workers=args.workers
        )
        regularizer = sigmoidal_regularizer(w, I, dist)
        excess = mc_sigmoidal_excess(w, I, t_sigmoid, dist, n_samples, streams.substream(2), workers=args.workers)
        record = {
            "distribution": dist_label(dist),
            "decomposition": decomposition.to_dict(),
            "expected_gradient": gradient,
            "mc_gradient": mc_gradient.mean,
            "mc_gradient_se": mc_gradient.standard_error,
            "sigmoidal_regularizer": regularizer.value,
            "bernoulli_analogue": regularizer.bernoulli_analogue,
            "mc_sigmoidal_excess": excess.mean,
            "mc_sigmoidal_excess_se": excess.standard_error,
        }
        rows.append(
            {
                "distribution": record["distribution"],
                "e_ens": decomposition.e_ens,
                "regularizer": decomposition.regularizer,
                "predicted_e_d": decomposition.predicted_e_d,
                "mc_e_d": decomposition.mc_e_d,
                "mc_standard_error": decomposition.mc_standard_error,
                "residual": decomposition.residual,
                "sigmoidal_regularizer": regularizer.value,
                "mc_sigmoidal_excess": excess.mean,
            }
        )
        path = _write([record], os.path.join(out_dir, f"dynamics_{_slug(record['distribution'])}"), args.format)
        print(
            f"{record['distribution']}: predicted E_D {decomposition.predicted_e_d:.6f}, "
            f"MC {decomposition.mc_e_d:.6f} +- {decomposition.mc_standard_error:.2e}; wrote {path}"
        )
    write_csv(pd.DataFrame(rows), os.path.join(out_dir, "dynamics.csv"))
    return 0


def cmd_train(args, out_dir: str) -> int:
    ds_train, ds_val, ds_test = _datasets(args)
    spec = _net_spec(args, ds_train)
    fixed = {}
    if args.dropout:
        dists = _dropouts(args, [])
        if len(dists) != 1:
            raise ConfigError("train takes a single --dropout")
        fixed["dropout"] = dists[0]
    cfg = _train_config(args, **fixed)
    if args.save_defaults:
        settings = {k: v for k, v in cfg.to_dict().items() if k not in ("schema", "schema_version")}
        config.save_config({"train": settings})
        logger.info(f"Saved training defaults to {config.get_config_path()}")
    net, report = train(spec, ds_train, ds_val, cfg, ds_test)
    stem = os.path.join(out_dir, f"run_{_slug(report.distribution)}_seed{cfg.seed}")
    report.save(stem + ".json")
    save_network(net, stem + "_network.json")
    if args.format == "csv":
        columns = {"epoch": np.arange(1, len(report.train_loss) + 1), "train_loss": report.train_loss}
        if report.validation_error:
            columns["validation_error"] = report.validation_error
        if report.test_errors:
            columns["test_error"] = report.test_errors
        write_csv(pd.DataFrame(columns), stem + ".csv")
    print(f"{report.distribution}: test error {report.test_error:.4f} ({report.wall_time:.1f}s); wrote {stem}.json")
    return 0


def cmd_compare(args, out_dir: str) -> int:
    dists = _dropouts(args, ["none", "bernoulli:p=0.5", "uniform", "gaussian:mu=0.5,var=0.2"])
    ds_train, ds_val, ds_test = _datasets(args)
    spec = _net_spec(args, ds_train)
    cfg = _train_config(args)
    reports = compare_methods(spec, ds_train, ds_val, cfg, dists, args.runs, ds_test, workers=args.workers)
    frame = pd.DataFrame(
        [
            {
                "method_a": r.method_a,
                "method_b": r.method_b,
                "mean_a": r.mean_a,
                "std_a": r.std_a,
                "mean_b": r.mean_b,
                "std_b": r.std_b,
                "p_value_t": r.p_value_t,
                "p_value_w": r.p_value_w,
                "degenerate": r.degenerate,
            }
            for r in reports
        ]
    )
    path = _write(reports, os.path.join(out_dir, "comparison"), args.format, frame)
    for r in reports:
        print(
            f"{r.method_a} ({r.mean_a:.4f}) vs {r.method_b} ({r.mean_b:.4f}): "
            f"p_t={r.p_value_t:.4g} p_w={r.p_value_w:.4g}"
        )
    print(f"wrote {path}")
    return 0


def cmd_sweep(args, out_dir: str) -> int:
    if args.grid:
        try:
            grid = [float(v) for v in args.grid.split(",")]
        except ValueError as exc:
            raise ConfigError(f"invalid --grid {args.grid!r}") from exc
    else:
        grid = list(config.DEFAULT_SIGMA_SQ_GRID)
    ds_train, ds_val, ds_test = _datasets(args)
    spec = _net_spec(args, ds_train)
    cfg = _train_config(args)
    frame = variance_sweep(spec, ds_train, ds_val, cfg, grid, args.runs, ds_test, mu=args.mu, workers=args.workers)
    path = os.path.join(out_dir, "variance_sweep.csv")
    write_csv(frame, path)
    print(frame.to_string(index=False))
    print(f"wrote {path}")
    return 0


def cmd_covhist(args, out_dir: str) -> int:
    ds_train, ds_val, ds_test = _datasets(args)
    spec = _net_spec(args, ds_train)
    measure_dropout = parse_spec(args.measure_dropout)
    dists = _dropouts(args, ["none", "gaussian:mu=0.5,var=0.2"])
    layers = args.layer or list(range(1, len(spec.layer_sizes) - 2))
    if not layers:
        raise ConfigError("the network has no hidden layer fed by dropout")
    root = RngStream(_seed(args), _COV_STREAM)
    order = root.substream(0).generator().permutation(len(ds_val))[: args.n_inputs]
    inputs = ds_val.inputs[order]
    n_repeats = args.samples or args.repeats

    measured = {}
    for dist in dists:
        # the baseline sees clean inputs too
        fixed = {"dropout": dist} if dist is not None else {"dropout": None, "input_dropout": None}
        net, report = train(spec, ds_train, ds_val, _train_config(args, **fixed), ds_test)
        for layer in layers:
            measured[(layer, report.distribution)] = pair_covariances(
                net,
                layer,
                inputs,
                n_repeats,
                root.substream(1 + layer),
                workers=args.workers,
                measure_dropout=measure_dropout if dist is None else None,
            )

    summary = []
    for layer in layers:
        samples = [c.values for (lay, _), c in measured.items() if lay == layer]
        for signed in (True, False):
            bins = shared_bins(samples, n_bins=args.bins, signed=signed)
            for (lay, label), covs in measured.items():
                if lay != layer:
                    continue
                hist = histogram(covs, bins=bins, signed=signed, distribution=label)
                kind = "signed" if signed else "absolute"
                stem = os.path.join(out_dir, f"covhist_layer{layer}_{_slug(label)}_{kind}")
                write_csv(hist.to_frame(), stem + ".csv")
                if args.format == "json":
                    hist.save(stem + ".json")
                fraction = zero_bin_fraction(hist)
                summary.append({"layer": layer, "distribution": label, "histogram": kind, "zero_bin_fraction": fraction})
                print(f"layer {layer} {label} ({kind}): zero-bin fraction {fraction:.4f}")
    with open(os.path.join(out_dir, "covhist_summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    return 0


def cmd_verify(args, out_dir: str) -> int:
    scale = VerifyScale(
        n_instances=args.instances,
        n_samples=args.samples or config.DEFAULT_MC_SAMPLES,
        n_networks=args.networks,
    )
    results = run_all(_seed(args), scale, workers=args.workers)
    print(format_table(results))
    save_records(results, os.path.join(out_dir, "verify.json"))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise OracleDisagreementError(f"{len(failed)} check(s) failed: {', '.join(failed)}")
    return 0


COMMANDS = {
    "analyze-static": cmd_analyze_static,
    "analyze-dynamic": cmd_analyze_dynamic,
    "covhist": cmd_covhist,
    "train": cmd_train,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one subcommand and return its exit code."""
    config.load_env()
    try:
        args = build_parser().parse_args(argv)
        if args.samples is not None and args.samples < 1:
            raise ConfigError("--samples must be positive")
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out_dir = config.get_out_dir(args.out_dir)
        logging.basicConfig(
            filename=os.path.join(out_dir, config.LOG_FILE_NAME),
            level=logging.INFO,
            format=config.LOG_FORMAT,
            force=True,
        )
        logger.info(f"{config.APP_NAME} {__version__}: {args.command} seed={_seed(args)}")
        return COMMANDS[args.command](args, out_dir)
    except ValidationError as exc:
        logger.error(f"Validation error: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        logger.error(f"Numeric failure: {exc}")
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except ContinuousDropoutError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0


def main():
    """Main entry point for the continuous-dropout command."""
    sys.exit(run())


if __name__ == "__main__":
    main()
