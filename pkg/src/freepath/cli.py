"""Command-line interface.

Subcommands map onto experiment kinds; every run is driven by a JSON config
file (comments allowed) and the only flags are --config, --output,
--workers, and --seed-override.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, FreepathError
from .experiments import (EXIT_CONFIG, EXIT_NUMERIC, parse_config,
                          run_experiment)

_SUBCOMMANDS = {
    "simulate-chain": "chain",
    "simulate-trajectory": "trajectory",
    "simulate-diffusion": "diffusion",
    "ladder": "ladder",
    "classify-boundary": "boundary",
    "verify": "verify",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freepath",
        description="Random flight process simulator: free-path chain, "
                    "diffusion limits, and boundary classification.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help="run a %r experiment" % kind)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--output", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: from config)")
        p.add_argument("--seed-override", type=int, default=None,
                       help="replace the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kind = _SUBCOMMANDS[args.command]
    try:
        config = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    if config.kind != kind:
        print("config error: config kind %r does not match subcommand %r" %
              (config.kind, args.command), file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(config, args.output, workers=args.workers,
                                seed_override=args.seed_override)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except FreepathError as exc:
        print("numeric error: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    for key, value in sorted(result.summary.items()):
        print("%s: %s" % (key, value))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
