import logging
from pathlib import Path

from sleepevents.commands.common import check_model_rate, output_path
from sleepevents.models.configs import RunConfig
from sleepevents.services.evaluation import calibrate_thresholds, calibrate_thresholds_all_deltas
from sleepevents.services.experiments import DEFAULT_DELTA, grid_for
from sleepevents.services.network import load_checkpoint
from sleepevents.services.record_io import write_thresholds
from sleepevents.services.signals import normalize_dataset
from sleepevents.services.storage.storage import get_storage

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("calibrate", help="Grid-search detection thresholds on the validation split")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--data", help="Dataset directory (default: paths.data_dir)")
    parser.add_argument("--delta", type=float, default=DEFAULT_DELTA, help="IoU criterion to maximize F1 at")
    parser.add_argument("--all-deltas", action="store_true", help="Calibrate for every delta of evaluation.deltas")
    parser.add_argument("--out", required=True, help="Thresholds JSON, or a directory with --all-deltas")
    parser.set_defaults(func=run)


def run(args, run_cfg: RunConfig) -> None:
    model = load_checkpoint(args.checkpoint)
    dataset = normalize_dataset(get_storage(args.data or run_cfg.paths.data_dir).load_dataset())
    validation = dataset.validation
    check_model_rate(model, run_cfg.window_duration, [record for record, _ in validation])
    grid = grid_for(run_cfg)

    if args.all_deltas:
        out = Path(args.out)
        by_delta = calibrate_thresholds_all_deltas(model, validation, grid, run_cfg.evaluation, run_cfg.threads)
        for delta, thresholds in by_delta.items():
            path = write_thresholds(out / f"thresholds_{delta:g}.json", thresholds)
            print(path)
        return

    thresholds = calibrate_thresholds(model, validation, grid, args.delta, run_cfg.evaluation, run_cfg.threads)
    write_thresholds(output_path(args.out), thresholds)
    print(args.out)
