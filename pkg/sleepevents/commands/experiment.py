import logging

import pandas as pd

from sleepevents.commands.common import output_path
from sleepevents.models.configs import RunConfig
from sleepevents.services import experiments
from sleepevents.services.storage.storage import get_storage

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("experiment", help="Run a train/calibrate/test study on a dataset")
    parser.add_argument("study", choices=["joint", "sampling", "duration", "learning-curve", "channels"])
    parser.add_argument("--data", help="Dataset directory (default: paths.data_dir)")
    parser.add_argument("--delta", type=float, default=experiments.DEFAULT_DELTA)
    parser.add_argument("--fractions", type=float, nargs="+", default=[0.5, 1.0], help="sampling: positive fractions")
    parser.add_argument("--durations", type=float, nargs="+", help="duration: default event durations (s)")
    parser.add_argument("--overlap", type=float, default=0.5, help="duration: default event overlap")
    parser.add_argument("--sizes", type=int, nargs="+", help="learning-curve: numbers of training records")
    parser.add_argument("--channels", type=int, nargs="+", default=[1, 2, 4], help="channels: channel counts to synthesize")
    parser.add_argument("--n-records", type=int, default=10, help="channels: synthetic records per count")
    parser.add_argument("--out", required=True, help="Result table (CSV)")
    parser.set_defaults(func=run)


def _study_table(args, run_cfg: RunConfig) -> pd.DataFrame:
    if args.study == "channels":
        seed = args.seed if args.seed is not None else run_cfg.synth.seed
        return experiments.sweep_channels(run_cfg, args.channels, args.n_records, seed, args.delta)
    dataset = get_storage(args.data or run_cfg.paths.data_dir).load_dataset()
    if args.study == "joint":
        return experiments.compare_joint_vs_separate(run_cfg, dataset, args.delta)
    if args.study == "sampling":
        return experiments.sweep_positive_fraction(run_cfg, dataset, args.fractions, args.delta)
    if args.study == "duration":
        durations = args.durations or [run_cfg.grid.default_duration]
        return experiments.sweep_default_duration(run_cfg, dataset, durations, args.overlap, args.delta)
    return experiments.learning_curve(run_cfg, dataset, args.sizes, args.delta)


def run(args, run_cfg: RunConfig) -> None:
    table = _study_table(args, run_cfg)
    table.to_csv(output_path(args.out), index=False)
    logger.info(f"{args.study} results written to {args.out}")
    print(args.out)
