"""Command-line entry point: ``oefnewton run|rates|bounds``."""

from __future__ import annotations

import argparse
import sys

from .bench import ConfigError, bound_rows, bounds_csv, load_config, rates_table, run_experiment


def _seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def _onoff(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def build_parser():
    ap = argparse.ArgumentParser(prog="oefnewton", description="Objective-evaluation-free Newton solvers: benchmark harness")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a config over its seeds and write traces, summary and bounds")
    r.add_argument("config")
    r.add_argument("--seeds", type=_seeds, help="comma-separated seeds overriding the config")
    r.add_argument("--certificates", type=_onoff, help="on|off")
    r.add_argument("--max-iter", type=int)
    r.add_argument("--out", help="output root (default: $OEFNEWTON_OUT or the working directory)")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for the seed sweep")
    q = sub.add_parser("rates", help="fit local convergence orders from trace CSVs with an e_k column")
    q.add_argument("directory")
    b = sub.add_parser("bounds", help="print the theoretical bound table for a config")
    b.add_argument("config")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seeds is not None and not args.seeds:
                raise ConfigError("empty seeds list")
            if args.max_iter is not None and args.max_iter < 1:
                raise ConfigError("--max-iter must be positive")
            code, summaries = run_experiment(cfg, args.seeds, args.certificates, args.max_iter, args.out, args.jobs)
            for s in summaries:
                extra = f" bound={s['bound_name']}:{s['bound']}" if "bound" in s else ""
                print(f"seed {s['seed']}: {s['status']} after {s['iterations']} iterations{extra}")
            return code
        if args.command == "bounds":
            cfg = load_config(args.config)
            sys.stdout.write(bounds_csv(bound_rows(cfg)))
            return 0
        rows, median = rates_table(args.directory)
        print("trace,fitted_order")
        for name, order in rows:
            print(f"{name},{'N/A' if order is None else f'{order:.4f}'}")
        print(f"median,{'N/A' if median is None else f'{median:.4f}'}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
