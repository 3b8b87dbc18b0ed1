"""Batch command line: fit, backtest, hausman, and report.

Exit codes: 0 success, 1 data/runtime error, 2 usage error. All outputs
are tidy CSV/JSON meant to feed any plotting tool.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .backtester import (
    ESTIMATOR_NAMES,
    BacktestConfig,
    _fit_estimator,
    read_run,
    run_backtest,
)
from .dataprep import build_design, default_grid, load_csv
from .errors import CpqrError, DataError
from .estimators import DEFAULT_TAUS, write_cube
from .evaluation import pit_series, pseudo_r2
from .inference import block_bootstrap, hausman_maps, write_decision_maps
from .kernel import BandwidthSpec, cv_losses, select_bandwidth


def _parse_taus(text: str) -> tuple:
    try:
        if ":" in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            vals = np.round(np.arange(lo, hi + 1e-9, step), 10)
        else:
            vals = [float(x) for x in text.split(",")]
        taus = tuple(float(t) for t in vals)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad tau list {text!r}: {exc}")
    if not taus or any(not 0 < t < 1 for t in taus):
        raise argparse.ArgumentTypeError("taus must lie strictly inside (0, 1)")
    return taus


def _parse_columns(text: str) -> dict:
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"bad column mapping {part!r}")
        role, name = part.split("=", 1)
        out[role.strip()] = name.strip()
    return out


def _read_config_file(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"bad config line: {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpqr",
        description="Inflation-at-Risk via conditionally parametric quantile regression",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--data", required=True, help="input CSV (quarterly)")
        p.add_argument("--horizon", type=int, choices=(1, 4), required=True)
        p.add_argument("--columns", type=_parse_columns, default=None,
                       help="role=column mapping, e.g. inflation=CPIAUCSL_PC1,...")
        p.add_argument("--taus", type=_parse_taus, default=DEFAULT_TAUS)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None, help="KEY=VALUE defaults file")
        p.add_argument("--jobs", type=int, default=1)

    p_fit = sub.add_parser("fit", help="fit one estimator and write its coefficient cube")
    add_common(p_fit)
    p_fit.add_argument("--estimator", required=True, choices=ESTIMATOR_NAMES)
    p_fit.add_argument("--no-noncrossing", action="store_true")
    p_fit.add_argument("--bandwidth", default="cv",
                       help="window fraction in {0.10..0.90} or 'cv'")

    p_bt = sub.add_parser("backtest", help="expanding-window out-of-sample run")
    add_common(p_bt)
    p_bt.add_argument("--estimators", default="cpqr,qar2",
                      help="comma-separated estimator list")
    p_bt.add_argument("--initial-window", type=int, default=100)
    p_bt.add_argument("--seed", type=int, default=0)
    p_bt.add_argument("--bandwidth", default="cv")
    p_bt.add_argument("--no-noncrossing", action="store_true")
    p_bt.add_argument("--recv-every", type=int, default=8)

    p_h = sub.add_parser("hausman", help="bootstrap Hausman decision maps")
    add_common(p_h)
    p_h.add_argument("--replicates", type=int, default=500)
    p_h.add_argument("--block-length", type=int, default=None)
    p_h.add_argument("--level", type=float, default=0.05)
    p_h.add_argument("--seed", type=int, default=0)
    p_h.add_argument("--bandwidth", default="cv")

    p_r = sub.add_parser("report", help="plot data from a finished backtest run")
    p_r.add_argument("--run", required=True)
    p_r.add_argument("--relative-to", default=None)
    p_r.add_argument("--out", default=None, help="defaults to the run directory")
    return parser


_CONFIG_CONVERTERS = {
    "taus": _parse_taus,
    "columns": _parse_columns,
    "horizon": int,
    "initial_window": int,
    "replicates": int,
    "block_length": int,
    "recv_every": int,
    "seed": int,
    "jobs": int,
    "level": float,
}


def _apply_config_defaults(args, argv):
    """Config-file values fill in options not given on the command line;
    explicit flags always win."""
    if getattr(args, "config", None):
        defaults = _read_config_file(args.config)
        given = {a.split("=")[0] for a in argv if a.startswith("--")}
        for key, value in defaults.items():
            flag = "--" + key.replace("_", "-")
            if hasattr(args, key) and flag not in given:
                convert = _CONFIG_CONVERTERS.get(key, str)
                setattr(args, key, convert(value))
    return args


def _resolve_bandwidth(text, design, taus, grid, noncrossing):
    if text == "cv":
        table = cv_losses(design, taus, grid, noncrossing=noncrossing)
        return select_bandwidth(table)
    return BandwidthSpec(float(text))


def cmd_fit(args) -> int:
    frame = load_csv(args.data, args.columns)
    design = build_design(frame, args.horizon)
    grid = default_grid()
    noncrossing = not args.no_noncrossing
    spec = None
    if args.estimator in ("cpqr", "cqr"):
        spec = _resolve_bandwidth(args.bandwidth, design, args.taus, grid, noncrossing)
    cube = _fit_estimator(
        args.estimator, design, args.taus, grid, spec, noncrossing, args.jobs
    )
    write_cube(cube, args.out, stem=args.estimator)
    print(f"wrote {args.out}/{args.estimator}.csv")
    return 0


def cmd_backtest(args) -> int:
    frame = load_csv(args.data, args.columns)
    design = build_design(frame, args.horizon)
    estimators = tuple(x.strip() for x in args.estimators.split(",") if x.strip())
    bandwidth = args.bandwidth if args.bandwidth == "cv" else float(args.bandwidth)
    config = BacktestConfig(
        horizon=args.horizon,
        initial_window=args.initial_window,
        taus=args.taus,
        estimators=estimators,
        bandwidth=bandwidth,
        recv_every=args.recv_every,
        noncrossing=not args.no_noncrossing,
        seed=args.seed,
        jobs=args.jobs,
    )
    run_backtest(design, config, out_dir=args.out)
    print(f"wrote run directory {args.out}")
    return 0


def cmd_hausman(args, parser) -> int:
    if args.replicates < 50:
        parser.error(f"--replicates must be at least 50, got {args.replicates}")
    frame = load_csv(args.data, args.columns)
    design = build_design(frame, args.horizon)
    grid = default_grid()
    taus = args.taus

    spec_cpqr = _resolve_bandwidth(args.bandwidth, design, taus, grid, True)
    spec_cqr = spec_cpqr
    if args.bandwidth == "cv":
        table = cv_losses(design, taus, grid, noncrossing=False)
        spec_cqr = select_bandwidth(table)

    from .estimators import fit_cpqr, fit_cqr, fit_qar

    ens_cp = block_bootstrap(
        design,
        lambda d: fit_cpqr(d, taus, grid, spec_cpqr, jobs=args.jobs),
        args.replicates, args.block_length, args.seed,
    )
    ens_cq = block_bootstrap(
        design,
        lambda d: fit_cqr(d, taus, grid, spec_cqr, jobs=args.jobs),
        args.replicates, args.block_length, args.seed,
    )
    ens_qar = block_bootstrap(
        design,
        lambda d: fit_qar(d, taus, lags=2),
        args.replicates, args.block_length, args.seed,
    )
    maps = hausman_maps(ens_cp, ens_cq, ens_qar, level=args.level)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_decision_maps(maps, out / "hausman_maps.csv")
    print(f"wrote {out}/hausman_maps.csv")
    return 0


def cmd_report(args) -> int:
    run = read_run(args.run)
    out = Path(args.out) if args.out else Path(args.run)
    out.mkdir(parents=True, exist_ok=True)
    dens = run["densities"]

    # per-quantile pseudo R2 curves, raw and relative
    raw_curves = {}
    for name, block in dens.groupby("estimator"):
        taus = sorted(float(t) for t in block["tau"].unique())
        curve = {}
        for tau in taus:
            sub = block[block["tau"] == tau]
            curve[tau] = pseudo_r2(
                sub["realization"].to_numpy(float), sub["rearranged"].to_numpy(float), tau
            )
        raw_curves[name] = curve
    rel_base = args.relative_to
    if rel_base is not None and rel_base not in raw_curves:
        raise DataError(f"--relative-to estimator {rel_base!r} not in the run")
    with open(out / "r2_curves.csv", "w", encoding="utf-8") as fh:
        fh.write("estimator,tau,r2,r2_relative\n")
        for name, curve in raw_curves.items():
            for tau, value in curve.items():
                rel = "" if rel_base is None else repr(float(value - raw_curves[rel_base][tau]))
                fh.write(f"{name},{tau!r},{float(value)!r},{rel}\n")

    # fan chart data at the 5th, 50th and 95th percentiles
    fan_taus = [0.05, 0.5, 0.95]
    with open(out / "fanchart.csv", "w", encoding="utf-8") as fh:
        fh.write("estimator,origin,tau,forecast,realization\n")
        for name, block in dens.groupby("estimator"):
            for tau in fan_taus:
                sub = block[np.isclose(block["tau"], tau)]
                for row in sub.itertuples(index=False):
                    fh.write(
                        f"{name},{row.origin},{tau!r},"
                        f"{float(row.rearranged)!r},{float(row.realization)!r}\n"
                    )

    # PIT CDFs with Monte Carlo bands
    pits = run["pits"]
    with open(out / "pit_cdf.csv", "w", encoding="utf-8") as fh:
        fh.write("estimator,r,empirical_cdf,band_lo,band_hi\n")
        for name, block in pits.groupby("estimator"):
            series = pit_series(block["pit"].to_numpy())
            for r, e, lo, hi in zip(
                series.evaluation_grid,
                series.empirical_cdf,
                series.band_lo,
                series.band_hi,
            ):
                fh.write(f"{name},{float(r)!r},{float(e)!r},{float(lo)!r},{float(hi)!r}\n")
    print(f"wrote report files to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = parser.parse_args(argv)
    args = _apply_config_defaults(args, argv)
    try:
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "backtest":
            return cmd_backtest(args)
        if args.command == "hausman":
            return cmd_hausman(args, parser)
        if args.command == "report":
            return cmd_report(args)
    except CpqrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
