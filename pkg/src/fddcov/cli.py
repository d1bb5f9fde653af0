"""Command line entry points: kernel build, single-matrix conversion, the
Monte Carlo campaign, and metric comparison of two covariance files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .conversion import (
    EapmParams,
    build_conversion_operator,
    build_kernel,
    convert,
    load_operator,
    save_operator,
    vectorization_counts,
)
from .covariance import (
    StructureViolation,
    read_covariance,
    write_covariance_binary,
    write_covariance_text,
    _BIN_MAGIC,
)
from .simharness import CampaignConfig, ConfigError, parse_config, run_campaign
from .metrics import grassmann_se, normalized_frobenius_se

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(args) -> CampaignConfig:
    cfg = parse_config(args.config) if args.config else CampaignConfig()
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["master_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        updates["n_trials"] = args.trials
    if getattr(args, "method", None) is not None:
        updates["methods"] = ("alg1", "alg2") if args.method == "both" else (args.method,)
    if getattr(args, "grid", None) is not None:
        az, _, zen = args.grid.lower().partition("x")
        try:
            updates["grid_azimuth"] = int(az)
            updates["grid_zenith"] = int(zen)
        except ValueError:
            raise ConfigError(f"bad --grid value {args.grid!r}, expected AxZ")
    if getattr(args, "wideband", False):
        updates["wideband"] = True
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = args.out
    if updates:
        from dataclasses import replace

        cfg = replace(cfg, **updates)
    return cfg


def _build_kernels(cfg: CampaignConfig):
    geom = cfg.geometry()
    grid = cfg.grid()
    kernel_ul = build_kernel(geom, cfg.ul_hz, grid, "structured")
    kernel_dl = build_kernel(geom, cfg.dl_hz, grid, "structured")
    return geom, kernel_ul, kernel_dl


def _cmd_kernel_build(args) -> int:
    cfg = _load_config(args)
    geom, kernel_ul, kernel_dl = _build_kernels(cfg)
    operator = build_conversion_operator(kernel_ul, kernel_dl, cfg.truncation)
    path = args.operator_out or cfg.operator_cache or "operator.fcnv"
    save_operator(path, operator)
    counts = vectorization_counts(geom)
    print(f"kernel rows (structured): {counts['structured']}")
    print(f"kernel rows (full): {counts['full']} "
          f"(per-polarization-block count: {counts['full_alt']})")
    print(f"operator {operator.matrix.shape[0]}x{operator.matrix.shape[1]} -> {path}")
    return EXIT_OK


def _cmd_convert(args) -> int:
    cfg = _load_config(args)
    r_u = read_covariance(args.input)
    _, kernel_ul, kernel_dl = _build_kernels(cfg)
    kernels = (kernel_ul, kernel_dl)
    if args.operator:
        operator = load_operator(args.operator)
        kernels = (operator, kernel_ul, kernel_dl)
    method = args.method or "alg1"
    if method == "both":
        raise ConfigError("convert needs a single method (alg1 or alg2)")
    eapm = EapmParams(cfg.eapm_max_iterations, cfg.eapm_tolerance, cfg.eapm_extrapolation)
    r_d = convert(r_u, kernels, method=method, eapm_params=eapm, truncation=cfg.truncation)
    with open(args.input, "rb") as f:
        binary = f.read(len(_BIN_MAGIC)) == _BIN_MAGIC
    if binary:
        write_covariance_binary(args.output, r_d)
    else:
        write_covariance_text(args.output, r_d)
    print(f"converted {args.input} -> {args.output} ({method})")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    summary = run_campaign(cfg)
    for (method, metric), stats in sorted(summary.items()):
        print(f"{method:9s} {metric:10s} median={stats['median']:.6g} "
              f"q1={stats['q1']:.6g} q3={stats['q3']:.6g}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    r_true = read_covariance(args.reference)
    r_est = read_covariance(args.estimate)
    print(f"frobenius_se {normalized_frobenius_se(r_true, r_est):.17g}")
    print(f"grassmann_se {grassmann_se(r_true, r_est):.17g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fddcov",
                                     description="FDD covariance conversion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, grid=True):
        p.add_argument("--config", help="campaign configuration file")
        p.add_argument("--seed", type=int, help="master seed override")
        if grid:
            p.add_argument("--grid", help="grid dimensions AxZ, e.g. 120x60")

    p = sub.add_parser("kernel", help="kernel/operator management")
    kernel_sub = p.add_subparsers(dest="kernel_command", required=True)
    pb = kernel_sub.add_parser("build", help="build and cache the conversion operator")
    common(pb)
    pb.add_argument("--operator-out", help="output path for the operator cache")
    pb.set_defaults(func=_cmd_kernel_build)

    p = sub.add_parser("convert", help="convert one covariance file UL -> DL")
    common(p)
    p.add_argument("--method", choices=["alg1", "alg2"], default="alg1")
    p.add_argument("--operator", help="use a cached conversion operator (alg1)")
    p.add_argument("input", help="uplink covariance file (FCOV-TEXT or FCOV1)")
    p.add_argument("output", help="output downlink covariance file")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("simulate", help="run the Monte Carlo campaign")
    common(p)
    p.add_argument("--trials", type=int, help="number of trials")
    p.add_argument("--method", choices=["alg1", "alg2", "both"], help="conversion methods")
    p.add_argument("--wideband", action="store_true", help="enable the OFDM snapshot model")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("metrics", help="compare two covariance files")
    p.add_argument("reference", help="true covariance file")
    p.add_argument("estimate", help="estimated covariance file")
    p.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError, StructureViolation) as exc:
        if isinstance(exc, (FileNotFoundError,)):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
