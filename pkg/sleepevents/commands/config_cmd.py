import logging
import sys

from sleepevents.commands.common import output_path
from sleepevents.models.configs import PRESETS, RunConfig

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("config", help="Configuration helpers")
    actions = parser.add_subparsers(dest="action", required=True)
    init = actions.add_parser("init", help="Emit a complete default configuration as JSON")
    init.add_argument("--preset", choices=PRESETS, default="spindle-kcomplex")
    init.add_argument("--out", help="Output file (default: stdout)")
    init.set_defaults(func=run_init, uses_config=False)


def run_init(args, run_cfg: RunConfig) -> None:
    cfg = RunConfig.preset(args.preset)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    document = cfg.model_dump_json(indent=2)
    if args.out:
        output_path(args.out).write_text(document + "\n", encoding="utf-8")
        logger.info(f"Configuration written to {args.out}")
    else:
        sys.stdout.write(document + "\n")
