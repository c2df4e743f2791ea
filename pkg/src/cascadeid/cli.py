"""Command-line driver.

    cascadeid prepare|mix|train|evaluate|score|fuse|report --config PATH [--seed N] [--variant NAME]

Failures exit with status 2 and print one line to stderr::

    error code=MISSING_CHECKPOINT message="..."
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ConfigError, load_config
from .models import VARIANTS
from .pipeline import PipelineError

COMMANDS = ("prepare", "mix", "train", "evaluate", "score", "fuse", "report")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cascadeid", description="Cascaded enhancement + speaker recognition experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML experiment config (defaults to full-scale settings)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--variant", choices=sorted(VARIANTS), help="model variant (default: every variant in the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(args: argparse.Namespace) -> None:
    cfg = load_config(args.config, args.seed)
    variants = [args.variant] if args.variant else list(cfg.variants)
    if args.command == "prepare":
        pipeline.cmd_prepare(cfg)
    elif args.command == "mix":
        pipeline.cmd_mix(cfg)
    elif args.command in ("train", "evaluate", "score"):
        step = getattr(pipeline, f"cmd_{args.command}")
        for v in variants:
            print(step(cfg, v))
    elif args.command == "fuse":
        print(pipeline.cmd_fuse(cfg))
    else:
        print(pipeline.cmd_report(cfg))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except PipelineError as exc:
        print(f'error code={exc.code} message="{exc}"', file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f'error code=CONFIG_INVALID message="{exc}"', file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
