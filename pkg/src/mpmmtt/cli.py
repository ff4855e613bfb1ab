"""Command-line entry point.

::

    mpmmtt run config.yaml --runs 100 --workers 4 --out results
    mpmmtt compare-modes config.yaml --runs 20
    mpmmtt sweep config.yaml
"""

import argparse
import json
import logging
import sys

from .experiment import (ConfigError, compare_modes, load_config, run_experiment,
                         run_sweep, with_overrides)


def build_parser():
    p = argparse.ArgumentParser(prog="mpmmtt",
                                description="Multi-target tracking experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("run", "Monte Carlo runs of one configuration"),
                        ("compare-modes", "paired open-loop / closed-loop / "
                                          "real-time comparison"),
                        ("sweep", "one aggregate row per sweep grid point")):
        s = sub.add_parser(verb, help=help_)
        s.add_argument("config", help="YAML experiment configuration")
        s.add_argument("--runs", type=int, help="number of Monte Carlo runs")
        s.add_argument("--seed", type=int, help="base seed; run i uses seed + i")
        s.add_argument("--workers", type=int, help="worker processes")
        s.add_argument("--out", help="output directory")
        s.add_argument("--mode", choices=("smoothed", "realtime"),
                       help="estimate output mode")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        tracker = {"output": args.mode} if args.mode else None
        cfg = with_overrides(cfg, tracker=tracker, runs=args.runs, seed=args.seed,
                             workers=args.workers, out=args.out)
        if args.verb == "run":
            result = run_experiment(cfg)
        elif args.verb == "compare-modes":
            result = compare_modes(cfg)
        else:
            result = {"points": run_sweep(cfg)}
    except ConfigError as exc:
        print("mpmmtt: invalid configuration: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("mpmmtt: %s" % exc, file=sys.stderr)
        return 1
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
