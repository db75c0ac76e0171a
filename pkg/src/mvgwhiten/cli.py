"""Command-line entry point.

    mvgwhiten fit|score|eval|render|run --config cfg.json \
        [--layers l1,l2] [--threads N] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import sys

from .config import PipelineConfig, load_config
from .errors import ConfigError, MvgWhitenError, NumericError
from .pipeline import STAGES, stage_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

COMMANDS = {**STAGES, "run": stage_run}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvgwhiten",
        description="Fit a single Gaussian to CNN feature maps, score pixels by "
        "squared Mahalanobis distance, and render whitened-component heatmaps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "score", "eval", "render", "run"):
        p = sub.add_parser(name, help=f"{name} stage")
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--layers", help="comma-separated layer subset")
        p.add_argument("--threads", type=int, help="worker-thread cap")
        p.add_argument("--out", help="output directory override")
    return parser


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if args.layers:
        cfg.layers = [l.strip() for l in args.layers.split(",") if l.strip()]
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out:
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MvgWhitenError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
