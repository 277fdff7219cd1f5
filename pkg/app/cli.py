#!/usr/bin/env python3
"""
MAP Market Lab - Lightweight CLI Entry Point

Parses arguments and answers --version without importing numpy or scipy;
the numerical core is only loaded once a batch command actually runs.
"""

import argparse
import sys

COMMANDS = {
    "simulate": "Simulate and export price paths",
    "verify-emm": "Check that discounted prices are martingales under the risk-neutral measure",
    "optimize": "Solve the optimal portfolio in every regime",
    "hedge-check": "Measure the self-financing residual of a replicating portfolio",
    "oracle": "Brute-force grid maximization of the regime objective",
}


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def create_parser():
    """Create the argument parser without importing heavy libraries"""
    parser = argparse.ArgumentParser(
        prog="maplab",
        description="MAP Market Lab - regime-switching jump markets: simulation, "
                    "martingale checks, optimal portfolios and replication"
    )
    parser.add_argument(
        "--version",
        action="store_true",
        help="Show version information"
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c", "--config",
        required=True,
        help="Scenario JSON document"
    )
    common.add_argument(
        "-o", "--out",
        default=None,
        help="Output directory for reports (default: MAPLAB_OUTPUT_DIR or output)"
    )
    common.add_argument(
        "--paths",
        type=_positive_int,
        default=None,
        help="Override run.n_paths"
    )
    common.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Override run.seed"
    )
    common.add_argument(
        "--threads",
        type=_positive_int,
        default=None,
        help="Worker threads for Monte-Carlo runs (default: MAPLAB_THREADS or 1)"
    )
    common.add_argument(
        "-v", "--verbose",
        action="store_true",
        help="Enable verbose logging"
    )

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, text in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=text, description=text)

    return parser


def handle_lightweight_commands(args):
    """Handle commands that don't require heavy imports"""
    if args.version:
        from app import __version__

        print(f"MAP Market Lab v{__version__}")
        print("Regime-switching jump market laboratory")
        return 0
    return None


def main(argv=None):
    """Main CLI entry point with fast startup for lightweight commands"""
    parser = create_parser()
    args = parser.parse_args(argv)

    result = handle_lightweight_commands(args)
    if result is not None:
        return result

    if args.command is None:
        parser.print_help()
        return 1

    from app.core import process_with_args

    return process_with_args(args)


if __name__ == "__main__":
    sys.exit(main())
