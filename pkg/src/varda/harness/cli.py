"""Command-line entry point (``varda`` or ``python -m varda``).

Subcommands: generate, run-heatmap, run-scaling, run-qg, run-surrogate,
tune, report.  Every run subcommand takes --config (JSON file of
ExperimentConfig fields), --seed, --out, --quick, plus a few targeted
overrides; flags win over file values.
"""

from __future__ import annotations

import argparse
import json
import sys

from .. import data as data_mod
from ..errors import ContractError, DatasetError
from ..models import profiles
from .config import SearchSpace, load_config
from . import experiments as exp


def _add_common(p):
    p.add_argument("--config", help="JSON file of config overrides")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", dest="out_dir", help="results directory")
    p.add_argument("--data-root", dest="data_root", help="dataset directory")
    p.add_argument("--quick", action="store_true", default=None,
                   help="small trial counts / short segments")
    p.add_argument("--trials", type=int, help="trials per configuration")
    p.add_argument("--workers", type=int, help="worker processes for trials")


def _cfg_from(args, **extra):
    keys = ("seed", "out_dir", "data_root", "quick", "trials", "workers")
    overrides = {k: getattr(args, k, None) for k in keys}
    overrides.update(extra)
    return load_config(args.config, **overrides)


def _cmd_generate(args):
    if args.system == "lorenz96":
        ds = exp.ensure_l96_dataset(args.dim, args.seed or 1,
                                    root=args.data_root or "data")
    elif args.system == "qg":
        ds = exp.ensure_qg_dataset(args.dim, args.seed or 1,
                                   root=args.data_root or "data")
    else:
        raise ContractError(f"unknown system {args.system!r}")
    path = data_mod.dataset_dir(args.data_root or "data", args.system
                                if args.system != "qg" else "qg",
                                args.dim, args.seed or 1)
    print(f"dataset ready: {path} ({ds.values.shape[0]} steps x {ds.dim})")
    return 0


def _parse_cells(spec):
    cells = []
    for part in spec.split(","):
        obs, noise = part.split(":")
        cells.append((int(obs), float(noise)))
    return cells


def _cmd_run_heatmap(args):
    cfg = _cfg_from(args)
    if args.cells:
        cells = _parse_cells(args.cells)
        obs_counts = sorted({c[0] for c in cells})
        noise_levels = sorted({c[1] for c in cells})
    else:
        obs_counts = noise_levels = None
    rows = exp.run_heatmap(cfg, obs_counts=obs_counts,
                           noise_levels=noise_levels)
    print(f"heatmap: {len(rows)} cells -> {cfg.out_dir}/heatmap/summary.csv")
    return 0


def _cmd_run_scaling(args):
    dims = [int(d) for d in args.dims.split(",")] if args.dims else None
    cfg = _cfg_from(args)
    rows, slopes = exp.run_scaling(cfg, dims=dims)
    for m, s in slopes.items():
        print(f"log-log runtime slope {m}: {s:.2f}")
    print(f"scaling: {len(rows)} dims -> {cfg.out_dir}/scaling/summary.csv")
    return 0


def _cmd_run_qg(args):
    cfg = _cfg_from(args)
    methods = args.methods.split(",") if args.methods else None
    rows = exp.run_qg(cfg, dim=args.dim, methods=methods,
                      n_windows=args.n_windows)
    for row in rows:
        print(f"qg{row['dim']} {row['method']:16s} rmse={row['aggregate_rmse']:.3e}"
              f" wall={row['wall_time_s']:.1f}s")
    return 0


def _cmd_run_surrogate(args):
    cfg = _cfg_from(args)
    summary = exp.run_surrogate(cfg)
    print(json.dumps({k: summary[k] for k in
                      ("free_rmse", "da_rmse", "da_rmse_unobserved",
                       "free_rmse_unobserved", "diverged_windows")},
                     indent=1))
    return 0


def _cmd_tune(args):
    cfg = _cfg_from(args)
    space = SearchSpace(samples=args.samples) if args.samples else SearchSpace()
    alpha, decay, trace = exp.tune_lr(space, cfg)
    print(f"best alpha={alpha:.4f} decay={decay:.4f} "
          f"({len(trace)} samples; trace in {cfg.out_dir}/tune/trace.csv)")
    return 0


def _cmd_report(args):
    rows = exp.write_report(args.results_dir, args.out_csv)
    print(f"report: {len(rows)} trials -> "
          f"{args.out_csv or (args.results_dir + '/report.csv')}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="varda",
        description="variational data assimilation twin experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="create a nature-run dataset")
    p.add_argument("--system", required=True, choices=["lorenz96", "qg"])
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--data-root", dest="data_root", default="data")
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("run-heatmap", help="obs coverage x noise grid (36D)")
    _add_common(p)
    p.add_argument("--cells", help="subset like '18:0.5' or '6:0.1,36:2.0'")
    p.set_defaults(fn=_cmd_run_heatmap)

    p = sub.add_parser("run-scaling", help="runtime/RMSE vs system dimension")
    _add_common(p)
    p.add_argument("--dims", help="comma list, e.g. 6,20,36")
    p.set_defaults(fn=_cmd_run_scaling)

    p = sub.add_parser("run-qg", help="two-layer QG assimilation")
    _add_common(p)
    p.add_argument("--dim", type=int, default=512,
                   choices=[512, 1152, 2048, 8192])
    p.add_argument("--methods", help="comma list incl. none/incremental/"
                                     "backprop-approx/backprop-exact")
    p.add_argument("--n-windows", dest="n_windows", type=int)
    p.set_defaults(fn=_cmd_run_qg)

    p = sub.add_parser("run-surrogate", help="reservoir-space assimilation")
    _add_common(p)
    p.set_defaults(fn=_cmd_run_surrogate)

    p = sub.add_parser("tune", help="random search for (alpha, decay)")
    _add_common(p)
    p.add_argument("--samples", type=int)
    p.set_defaults(fn=_cmd_tune)

    p = sub.add_parser("report", help="consolidate results into one CSV")
    p.add_argument("results_dir")
    p.add_argument("--out-csv", dest="out_csv")
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ContractError, DatasetError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
