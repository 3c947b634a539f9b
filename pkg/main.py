"""
MFLDP - Mean-Field SGD Large-Deviation Laboratory
Command-line entry point: mfldp <experiment> --config <file> [--out <dir>] [--workers k] [--checked]
"""
import argparse
import sys
from typing import List, Optional

from config import Config
from models.run_config import EXPERIMENTS, ConfigError, parse_config, config_schema
from services.experiment_service import ExperimentService
from utils.logger import logger

EXIT_CONFIG_ERROR = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=Config.TOOL_NAME,
                                     description="Mean-field SGD large-deviation laboratory")
    parser.add_argument("--version", action="version", version=f"{Config.TOOL_NAME} {Config.TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides config output_dir)")
        p.add_argument("--workers", type=int, default=1, help="worker threads for replica batches")
        p.add_argument("--checked", action="store_true",
                       help="single-threaded, every invariant assertion enabled")
        p.add_argument("--no-plots", dest="plots", action="store_false", help="skip SVG plots")

    sub.add_parser("schema", help="print the JSON schema of the run configuration")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(config_schema())
        return 0

    try:
        Config.validate()
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    except (ConfigError, ValueError, OSError) as e:
        logger.error(f"❌ {e}")
        return EXIT_CONFIG_ERROR

    if cfg.experiment != args.command:
        logger.warning(f"⚠️ Config names experiment '{cfg.experiment}', running '{args.command}'")
        cfg = cfg.model_copy(update={"experiment": args.command})

    service = ExperimentService(cfg, out_dir=args.out, workers=args.workers, checked=args.checked,
                                plots_enabled=args.plots)
    return service.run()


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
