import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from sleepevents import __version__
from sleepevents.commands import (
    calibrate,
    config_cmd,
    consensus,
    detect,
    evaluate,
    experiment,
    generate,
    train,
)
from sleepevents.config import Config
from sleepevents.models.configs import RunConfig
from sleepevents.utils.errors import DetectorError, InvalidConfig
from sleepevents.utils.logger import configure_logger

logger = logging.getLogger(__name__)

COMMANDS = (config_cmd, generate, train, detect, calibrate, evaluate, consensus, experiment)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=Config.APP_NAME, description="One-shot sleep micro-event detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="Run configuration (JSON, see `config init`)")
    parser.add_argument("--seed", type=int, help="Override the configuration seed")
    parser.add_argument("--threads", type=int, help="Worker threads (default: available cores)")
    parser.add_argument("--log-level", default=Config.LOG_LEVEL, help="Console log level")
    parser.add_argument("--log-dir", help="Directory of the rotating log file")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """The configuration file (or defaults) with global flag overrides applied, validated."""
    if args.config:
        run_cfg = RunConfig.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        run_cfg = RunConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise InvalidConfig(f"--threads must be at least 1, got {args.threads}")
        updates["threads"] = args.threads
    if updates:
        run_cfg = RunConfig.model_validate({**run_cfg.model_dump(), **updates})
    return run_cfg.check()


def _one_line(message: str) -> str:
    return " ".join(str(message).split())


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logger(args.log_level, args.log_dir)
    logger.debug(f"{Config.APP_NAME} {__version__}: {args.command}")
    try:
        run_cfg = RunConfig() if not getattr(args, "uses_config", True) else load_run_config(args)
        args.func(args, run_cfg)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"error: {InvalidConfig.category}: {_one_line(e)}", file=sys.stderr)
        return 1
    except DetectorError as e:
        logger.error(f"{e.category}: {e}")
        print(f"error: {e.category}: {_one_line(e)}", file=sys.stderr)
        return 1
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        print(f"error: IOError: {_one_line(e)}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception("Unexpected failure")
        print(f"error: InternalError: {_one_line(e)}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
