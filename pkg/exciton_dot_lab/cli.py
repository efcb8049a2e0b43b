"""
Command-line front end: ``edl simulate|analyze|gfactor|preset``.

Exit codes: 0 on success, 1 for invalid input or configuration, 2 when a fit
or the filesystem fails.
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import __version__
from .commands import cmd_analyze, cmd_gfactor, cmd_simulate
from .config import list_presets, load_config, preset_text
from .exceptions import FitError, ValidationError


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors are invalid input and exit with EXIT_INVALID."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(
        prog="edl",
        description="Simulate and analyse polarization-resolved photon statistics of quantum-dot excitons",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="generate photon records or time tags")
    simulate.add_argument("--config", required=True, help="config file or preset name")
    simulate.add_argument("--seed", type=int, help="override the config seed")
    simulate.add_argument("--out", help="override the output directory")
    _add_output_options(simulate)

    analyze = commands.add_parser("analyze", help="histogram, fit and Fourier-analyse simulated data")
    analyze.add_argument("path", help="records or tags CSV, or a simulate output directory")
    analyze.add_argument("--config", help="config file or preset name; defaults to the directory manifest")
    analyze.add_argument("--out", help="output directory (default: PATH/analysis)")
    _add_output_options(analyze)

    gfactor = commands.add_parser("gfactor", help="fit g-factors to splittings measured at several fields")
    gfactor.add_argument("inputs", nargs="+", metavar="FILE[@B]", help="fit results, optionally with the field in T")
    gfactor.add_argument("--out", default=".", help="report directory")
    gfactor.add_argument("--unweighted", action="store_true", help="ignore per-point errors in the regression")
    _add_output_options(gfactor)

    preset = commands.add_parser("preset", help="list or print the shipped configs")
    preset_commands = preset.add_subparsers(dest="preset_command", required=True)
    preset_commands.add_parser("list", help="list preset names")
    show = preset_commands.add_parser("show", help="print a preset")
    show.add_argument("name")
    return parser


def _add_output_options(parser: argparse.ArgumentParser):
    parser.add_argument("--format", choices=["csv"], default="csv", help="table format")
    parser.add_argument("--gnuplot", action="store_true", help="also write gnuplot scripts")


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def run(args: argparse.Namespace) -> int:
    if args.command == "simulate":
        config = load_config(args.config, overrides={"seed": args.seed, "output_dir": args.out})
        cmd_simulate(config, gnuplot=args.gnuplot)
    elif args.command == "analyze":
        config = load_config(args.config, overrides={"output_dir": args.out or args.path}) if args.config else None
        cmd_analyze(args.path, config, out=args.out, gnuplot=args.gnuplot)
    elif args.command == "gfactor":
        cmd_gfactor(args.inputs, out=args.out, weighted=not args.unweighted, gnuplot=args.gnuplot)
    elif args.preset_command == "list":
        for name in list_presets():
            print(name)
    else:
        sys.stdout.write(preset_text(args.name))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return run(args)
    except ValidationError as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except (FitError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_FAILED
