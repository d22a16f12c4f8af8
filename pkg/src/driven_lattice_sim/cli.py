"""Command-line entry point: ``sim run``, ``sim validate``, ``sim list-presets``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .errors import SimError
from .scenarios import PRESET_NOTES, PRESETS, parse_config, run_scenario, run_validation

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2


def build_parser():
    parser = argparse.ArgumentParser(prog="sim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write CSV plus report")
    run.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
    run.add_argument("--config", help="key=value config file with [section] headers")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key (repeatable)")
    run.add_argument("--out", required=True, help="CSV output path; report goes to <out>.report.txt")

    val = sub.add_parser("validate", help="run a validation study and report pass/fail")
    val.add_argument("name", choices=sorted(n for n in PRESETS if n.startswith("validate_")))
    val.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    sub.add_parser("list-presets", help="show preset names")
    return parser


def _cmd_run(args):
    text = ""
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    cfg = parse_config(text, preset=args.preset, overrides=args.overrides)
    _, report = run_scenario(cfg, out=args.out)
    print(report.format(), end="")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _cmd_validate(args):
    _, report = run_validation(args.name, overrides=args.overrides)
    print(report.format(), end="")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-presets":
        for name in PRESETS:
            print(f"{name:20s} {PRESET_NOTES[name]}")
        return EXIT_OK
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_validate(args)
    except (SimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
