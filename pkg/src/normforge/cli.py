"""Command-line entry point: ``normforge {run,sweep,verify,report}``."""

import argparse
from dataclasses import replace
import json
import sys

from .errors import ConfigError
from . import experiment


def _floats(s):
    try:
        return tuple(float(p) for p in s.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _ints(s):
    try:
        return tuple(int(p) for p in s.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="normforge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (default: run.out_dir or runs/<variant>)")
    r.add_argument("--seed", type=int)

    s = sub.add_parser("sweep", help="joint learning-rate sweep")
    s.add_argument("--config", required=True, action="append",
                   help="repeat to sweep several variants into one table")
    s.add_argument("--rho", type=_floats, default=experiment.SweepConfig.rho_grid)
    s.add_argument("--seeds", type=_ints, default=(0,))
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--tau", type=float, default=experiment.TAU_ROB)
    s.add_argument("--out", default="sweep_out")

    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--tol-scale", type=float, default=1.0)
    v.add_argument("--json", action="store_true", help="print the report as JSON")
    v.add_argument("--quick", action="store_true", help="skip the slow training-based checks")
    v.add_argument("--only", help="comma-separated criterion names")
    v.add_argument("--report", help="also write the JSON report to this file")
    v.add_argument("--workers", type=int, default=1, help="processes for the robustness sweep")

    rp = sub.add_parser("report", help="re-aggregate existing sweep CSVs")
    rp.add_argument("--in", dest="in_dir", required=True)
    rp.add_argument("--tau", type=float, default=experiment.TAU_ROB)
    return p


def _cmd_run(args):
    cfg = experiment.load_config(args.config)
    cfg = replace(cfg, seed=experiment.resolve_seed(cfg.seed, args.seed))
    out = args.out or cfg.out_dir or f"runs/{cfg.variant.name}"
    summary = experiment.run_training(cfg, out)
    keys = ("status", "variant", "steps_completed", "initial_loss", "final_train_loss",
            "mean_last_10pct_loss", "clamp_rate", "wall_time_s")
    for k in keys:
        print(f"{k:>22}: {summary[k]}")
    print(f"{'output':>22}: {out}")
    return 0 if summary["status"] == "ok" else 3


def _cmd_sweep(args):
    sweeps = []
    for path in args.config:
        cfg = experiment.load_config(path)
        cfg = replace(cfg, seed=experiment.resolve_seed(cfg.seed))
        sweeps.append(experiment.SweepConfig(cfg, args.rho, args.seeds, args.tau))
    res = experiment.run_sweep(sweeps, args.out, workers=args.workers)
    print(experiment.format_report(res))
    print(f"\nwrote {args.out}/sweep.csv, sweep_agg.csv, sweep_summary.json")
    return 0


def _cmd_verify(args):
    from . import verify

    only = args.only.split(",") if args.only else None
    records = verify.run_verify(tol_scale=args.tol_scale, quick=args.quick, only=only,
                                workers=args.workers)
    if args.report:
        with open(args.report, "w") as f:
            json.dump(records, f, indent=1)
    if args.json:
        print(json.dumps(records, indent=1))
    else:
        print(verify.format_records(records))
    return 0 if all(r["passed"] for r in records) else 1


def _cmd_report(args):
    print(experiment.format_report(experiment.report(args.in_dir, args.tau)))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "report": _cmd_report}
    try:
        return handler[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
