"""Command-line interface.

Subcommands: ``simulate`` (synthetic benchmark runs), ``screen`` (single
outcome from CSV), ``screen-multi`` (mutual signals for several
outcomes), ``error-cov`` (QC covariance estimation only), and ``impute``
(standalone imputation export). Exit codes: 0 success, 2 configuration
error, 3 data error, 4 solver error.
"""

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import harness
from .errorcov import qc_cov, qc_paired_cov, read_qc_csv
from .exceptions import ConfigError, KnockemError
from .filter import write_report_csv, write_report_json
from .harness import ScreenOptions, SimConfig
from .impute import ImputeConfig, ObservedData, impute_chained
from . import rng as rngmod


def _add_impute_flags(p):
    p.add_argument("--impute-method", default=None,
                   choices=["half_min", "mean", "chained_default", "chained_cart", "chained_pmm"])
    p.add_argument("--k", type=int, default=None, help="number of completed datasets")
    p.add_argument("--include-outcome", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--sweeps", type=int, default=None)


def _impute_config(args, base=None):
    cfg = base or ImputeConfig()
    if args.impute_method is not None:
        cfg.method = args.impute_method
    if args.k is not None:
        cfg.k = args.k
    if args.include_outcome is not None:
        cfg.include_outcome = args.include_outcome
    if args.sweeps is not None:
        cfg.sweeps = args.sweeps
    return cfg


def _screen_options(args):
    opts = ScreenOptions()
    opts.statistic = args.stat
    opts.q = args.q
    opts.c = args.c
    opts.seed = args.seed
    opts.stability = args.stability
    opts.log_transform = args.log_transform
    opts.truncate = args.truncate
    opts.impute = _impute_config(args, opts.impute)
    if getattr(args, "order_mode", None):
        opts.order_mode = args.order_mode
    return opts


def _add_screen_flags(p, multi):
    p.add_argument("--data", required=True, help="data CSV with header row; NA marks missing")
    if multi:
        p.add_argument("--outcome", required=True, nargs="+",
                       help="two or more outcome column names")
        p.add_argument("--order-mode", default=None, choices=["maxprod", "sumprod"])
    else:
        p.add_argument("--outcome", required=True, help="outcome column name")
    p.add_argument("--qc", default=None, help="QC CSV for error-covariance estimation")
    p.add_argument("--qc-paired", action="store_true", help="use within-batch QC differences")
    p.add_argument("--qc-diagonal", action="store_true", help="variances-only error covariance")
    p.add_argument("--stat", default="lasso", choices=list(harness.STATISTICS))
    p.add_argument("--q", type=float, default=0.1, help="target FDR level")
    p.add_argument("--c", type=int, default=1, choices=[0, 1], help="scan offset (1 = finite-sample guarantee)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stability", type=int, default=0, help="stability-selection repetitions")
    p.add_argument("--log-transform", action="store_true")
    p.add_argument("--truncate", action=argparse.BooleanOptionalAction, default=True)
    _add_impute_flags(p)
    p.add_argument("--out", required=True, help="output prefix (.json/.csv written)")


def build_parser():
    parser = argparse.ArgumentParser(prog="knockem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a synthetic benchmark configuration")
    sim.add_argument("--config", default=None, help="JSON config; flags override its fields")
    sim.add_argument("--setting", default=None)
    sim.add_argument("--n", type=int, default=None)
    sim.add_argument("--p", type=int, default=None)
    sim.add_argument("--a-beta", type=float, default=None)
    sim.add_argument("--sigma2-eps", type=float, default=None)
    sim.add_argument("--rho-eps", type=float, default=None)
    sim.add_argument("--pi-mis", type=float, default=None)
    sim.add_argument("--p-mis", type=float, default=None)
    sim.add_argument("--mis-basis", default=None, choices=["W", "X"])
    sim.add_argument("--statistics", nargs="+", default=None, choices=list(harness.STATISTICS))
    sim.add_argument("--q", type=float, default=None)
    sim.add_argument("--c", type=int, default=None, choices=[0, 1])
    sim.add_argument("--replicates", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None, help="required (bit-reproducible runs)")
    _add_impute_flags(sim)
    sim.add_argument("--progress", action="store_true")
    sim.add_argument("--out", required=True, help="output prefix (.json/.csv written)")

    scr = sub.add_parser("screen", help="screen one outcome from a data CSV")
    _add_screen_flags(scr, multi=False)

    scrm = sub.add_parser("screen-multi", help="screen mutual signals for several outcomes")
    _add_screen_flags(scrm, multi=True)

    ec = sub.add_parser("error-cov", help="estimate the error covariance from QC samples")
    ec.add_argument("--qc", required=True)
    ec.add_argument("--paired", action="store_true")
    ec.add_argument("--diagonal", action="store_true")
    ec.add_argument("--out", required=True, help="output CSV for the covariance matrix")

    imp = sub.add_parser("impute", help="export completed copies of an incomplete CSV")
    imp.add_argument("--data", required=True)
    imp.add_argument("--outcome", required=True)
    _add_impute_flags(imp)
    imp.add_argument("--seed", type=int, default=0)
    imp.add_argument("--out", required=True, help="output prefix; one CSV per completion")
    return parser


def _cmd_simulate(args):
    if args.config:
        cfg = SimConfig.from_json(args.config)
    else:
        required = {"setting": args.setting, "n": args.n, "p": args.p, "seed": args.seed}
        missing = [k for k, v in required.items() if v is None]
        if missing:
            raise ConfigError(f"missing required flags: {missing}")
        cfg = SimConfig(setting=args.setting, n=args.n, p=args.p, seed=args.seed)
    overrides = {
        "setting": args.setting, "n": args.n, "p": args.p, "a_beta": args.a_beta,
        "sigma2_eps": args.sigma2_eps, "rho_eps": args.rho_eps, "pi_mis": args.pi_mis,
        "p_mis": args.p_mis, "mis_basis": args.mis_basis, "q": args.q, "c": args.c,
        "replicates": args.replicates, "seed": args.seed,
    }
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    if args.statistics is not None:
        cfg.statistics = tuple(args.statistics)
    cfg.impute = _impute_config(args, cfg.impute)
    cfg.__post_init__()
    if cfg.seed is None:
        raise ConfigError("--seed is required for simulate")
    summaries = harness.run_replicates(cfg, progress=args.progress)
    harness.write_summary_json(args.out + ".json", cfg, summaries)
    harness.write_summary_csv(args.out + ".csv", cfg, summaries)
    print(harness.render_summaries(cfg, summaries))
    return 0


def _cmd_screen(args, multi):
    opts = _screen_options(args)
    outcome_cols = list(args.outcome) if multi else [args.outcome]
    report, stability, names = harness.screen_files(
        args.data, outcome_cols, qc_csv=args.qc, qc_paired=args.qc_paired,
        qc_diagonal=args.qc_diagonal, opts=opts,
    )
    write_report_json(args.out + ".json", report, stability, extra={"feature_names": names})
    write_report_csv(args.out + ".csv", report, stability, feature_names=names)
    sel = ", ".join(names[j] for j in report.selected) or "(none)"
    print(f"selected at q={opts.q} (c={opts.c}): {sel}")
    return 0


def _cmd_error_cov(args):
    qc = read_qc_csv(args.qc)
    est = qc_paired_cov(qc, diagonal=args.diagonal) if args.paired else qc_cov(qc, diagonal=args.diagonal)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(qc.feature_names)
        for row in est.sigma_eps:
            writer.writerow([repr(float(v)) for v in row])
    print(f"wrote {est.sigma_eps.shape[0]}x{est.sigma_eps.shape[1]} error covariance to {args.out}")
    return 0


def _cmd_impute(args):
    outcomes, W, R, names = harness.read_data_csv(args.data, [args.outcome])
    cfg = _impute_config(args)
    obs = ObservedData(y=outcomes[0], W=W, R=R)
    completed = impute_chained(obs, cfg, rngmod.substream(args.seed, 0, rngmod.IMPUTE))
    for k, Wk in enumerate(completed.matrices):
        path = f"{args.out}_k{k}.csv"
        harness.write_dataset_csv(path, [outcomes[0]], [args.outcome], Wk,
                                  np.ones_like(R), feature_names=names)
        print(f"wrote {path}")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "screen":
            return _cmd_screen(args, multi=False)
        if args.command == "screen-multi":
            return _cmd_screen(args, multi=True)
        if args.command == "error-cov":
            return _cmd_error_cov(args)
        if args.command == "impute":
            return _cmd_impute(args)
        parser.error(f"unknown command {args.command}")
    except KnockemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
