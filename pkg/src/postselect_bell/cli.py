"""Command-line entry point: ``postselect-bell <experiment> [--config PATH] ...``."""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .runner import EXPERIMENTS, load_config, run_experiment, validate_config


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="postselect-bell",
        description="Bell-inequality experiments with and without postselection.")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", metavar="PATH", help="YAML configuration file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--trials", type=int, help="trials (or samples) per setting")
        p.add_argument("--out", metavar="DIR", help="output directory for CSV files")
        p.add_argument("--flip-bob", type=_bool, metavar="BOOL",
                       help="Bob thresholds +n.b (true, default) or -n.b (false)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config).to_dict() if args.config else {"experiment": args.experiment}
        if raw["experiment"] != args.experiment:
            raise ConfigError("experiment", f"config is for {raw['experiment']!r}, subcommand is {args.experiment!r}")
        for key, value in (("seed", args.seed), ("trials", args.trials), ("out", args.out),
                           ("flip_bob", args.flip_bob)):
            if value is not None:
                raw[key] = value
        cfg = validate_config(raw)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    outcome = run_experiment(cfg)
    print(outcome.message, file=sys.stderr if outcome.status else sys.stdout)
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
