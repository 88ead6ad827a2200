"""``normsgd`` command line.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .data import LibsvmParseError
from .harness import ConfigError, cmd_descent_check, cmd_gen_data, cmd_rates, cmd_solve, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="normsgd", description="Stochastic normal-map and proximal SGD experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="flat key = value config file")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed-list", type=_seed_list, help="comma separated seeds (overrides the config)")
        p.add_argument("--threads", type=int, help="worker threads for independent runs")

    common(sub.add_parser("solve", help="run the configured methods and write trajectories + summary.json"))
    common(sub.add_parser("rates", help="empirical convergence rates versus predicted exponents"))
    common(sub.add_parser("descent-check", help="audit merit-function descent over time windows"))

    gen = sub.add_parser("gen-data", help="write a synthetic classification dataset in libsvm format")
    gen.add_argument("path")
    gen.add_argument("--n-samples", type=int, default=2000)
    gen.add_argument("--n-features", type=int, default=500)
    gen.add_argument("--density", type=float, default=0.05)
    gen.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        if args.command == "gen-data":
            if args.n_samples < 0 or args.n_features < 1 or not 0.0 < args.density <= 1.0:
                raise ConfigError("need n_samples >= 0, n_features >= 1 and density in (0, 1]")
            cmd_gen_data(args.n_samples, args.n_features, args.density, args.seed, args.path)
            return EXIT_OK
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg = load_config(args.config, out=args.out, seeds=args.seed_list, threads=args.threads)
        if args.command == "solve":
            summary = cmd_solve(cfg)
            for method, per_alpha in summary["aggregate"].items():
                for alpha, agg in per_alpha.items():
                    print(f"{method} alpha={alpha} reached={agg['reached']}/{agg['runs']} "
                          f"mean_epochs={agg['mean_epochs_to_accuracy']}")
        elif args.command == "rates":
            for row in cmd_rates(cfg):
                print(f"{row['problem']} gamma={row['gamma']:g} alpha={row['alpha']:g} "
                      f"iter_slope={row['iter_slope']} psi_slope={row['psi_slope']} flag={row['flag']}")
        else:
            report = cmd_descent_check(cfg)
            print(json.dumps({"T": report["T"], "total_violations": report["total_violations"]}))
    except (FloatingPointError, OverflowError) as exc:
        print(f"normsgd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, LibsvmParseError, ValueError, OSError) as exc:
        print(f"normsgd: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
