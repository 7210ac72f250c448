"""Command-line entry point: ``dpmix gen|learn|eval|audit --config PATH``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import harness
from .errors import (DimensionMismatch, InsufficientData, InvalidConfig, InvalidMixture,
                     IoFailure, ParameterOverflow)

log = logging.getLogger("dpmix")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpmix", description=__doc__)
    parser.add_argument("command", choices=sorted(harness.COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--frozen-clock", action="store_true",
                        help="zero all timings so reruns are byte-identical")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    previous = os.environ.get("DPMIX_FROZEN_CLOCK")
    if args.frozen_clock:
        os.environ["DPMIX_FROZEN_CLOCK"] = "1"
    try:
        cfg = harness.load_config(args.config, args.command, args.seed, args.out)
        return harness.COMMANDS[args.command](cfg)
    except InsufficientData as exc:
        log.error("insufficient data: %s (required %d)", exc, exc.required)
        return harness.EXIT_DATA
    except (InvalidConfig, InvalidMixture, IoFailure, DimensionMismatch,
            ParameterOverflow) as exc:
        log.error("%s", exc)
        return harness.EXIT_CONFIG
    finally:
        if previous is None:
            os.environ.pop("DPMIX_FROZEN_CLOCK", None)
        else:
            os.environ["DPMIX_FROZEN_CLOCK"] = previous


if __name__ == "__main__":
    sys.exit(main())
