"""``fedgen <command> --config <path> [--seed N] [--output DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .experiment import (MissingPrerequisite, cmd_calibrate, cmd_comm_report, cmd_evaluate,
                         cmd_generate_data, cmd_run_all, cmd_train, configure_threads)

COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "comm-report": cmd_comm_report,
    "run-all": cmd_run_all,
}

EXIT_OK, EXIT_CONFIG, EXIT_MISSING = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedgen", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--output", default=None, help="override output_dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.output)
    except ConfigError as exc:
        print(f"fedgen: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    configure_threads()
    try:
        path = COMMANDS[args.command](cfg)
    except MissingPrerequisite as exc:
        print(f"fedgen: {exc}", file=sys.stderr)
        return EXIT_MISSING
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
