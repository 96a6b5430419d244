"""Command line entry point: ``lsm <stage> --config <file> [options]``."""

import argparse
import logging
import sys

from lsm.pipeline import STAGES, ConfigError, PipelineConfig, StageError, run_stage

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsm",
        description="Landslide susceptibility experiments on raster stacks.",
    )
    parser.add_argument("stage", choices=STAGES,
                        help="pipeline stage to run")
    parser.add_argument("--config", required=True, metavar="FILE",
                        help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=None, metavar="N",
                        help="override the sampling, training, and scene seeds")
    parser.add_argument("--out", default=None, metavar="DIR",
                        help="override the configured output directory")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress logging")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = PipelineConfig.load(args.config, seed=args.seed, out_dir=args.out)
        run_stage(args.stage, cfg)
    except ConfigError as e:
        print(f"lsm: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"lsm: {e}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"lsm: {args.stage} failed: {e}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
