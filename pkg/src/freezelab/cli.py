"""``freezelab <pretrain|transfer|ablate|fid|grid> --config <path> [...]``

Exit codes: 0 ok, 2 numeric abort, 3 checkpoint mismatch, 4 bad input
(config, dataset or checkpoint format), 5 I/O failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .config import STRATEGY_NAMES, load_config, parse_depths
from .errors import (
    CheckpointMismatchError,
    ConfigError,
    FormatError,
    NumericalError,
    UsageError,
)

EXIT_OK, EXIT_NUMERIC, EXIT_CHECKPOINT, EXIT_INPUT, EXIT_IO = 0, 2, 3, 4, 5
COMMANDS = ("pretrain", "transfer", "ablate", "fid", "grid")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with the numeric-abort code
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="freezelab", description="Desk-scale GAN transfer-learning lab.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--strategy", help=f"transfer strategy: {', '.join(STRATEGY_NAMES)}")
    p.add_argument("--depths", help="comma-separated freeze depths for ablate, e.g. 1,2,3")
    p.add_argument("--out", help="output directory (default: the config's out key)")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    return p


def run(argv) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    out = args.out if args.out is not None else cfg.path("out")
    if args.command == "pretrain":
        harness.cmd_pretrain(cfg, out)
    elif args.command == "transfer":
        harness.cmd_transfer(cfg, args.strategy or cfg.strategy, out)
    elif args.command == "ablate":
        depths = parse_depths(args.depths) if args.depths else cfg.depth_list()
        table = harness.cmd_ablate(cfg, depths, out)
        sys.stdout.write(table.to_wide_text())
    elif args.command == "fid":
        _, text = harness.cmd_fid(cfg)
        sys.stdout.write(text)
    elif args.command == "grid":
        path = harness.cmd_grid(cfg, out)
        sys.stdout.write(f"{path}\n")
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(
        level=logging.WARNING if "-q" in argv or "--quiet" in argv else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(argv)
    except NumericalError as exc:
        code, msg = EXIT_NUMERIC, str(exc)
    except CheckpointMismatchError as exc:
        code, msg = EXIT_CHECKPOINT, str(exc)
    except (FormatError, ConfigError, UsageError) as exc:
        code, msg = EXIT_INPUT, str(exc)
    except OSError as exc:
        code, msg = EXIT_IO, str(exc)
    print(f"freezelab: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
