import logging

from sleepevents.commands.common import check_model_rate, load_records, output_path
from sleepevents.models.configs import RunConfig
from sleepevents.services.experiments import grid_for
from sleepevents.services.inference import detect_records
from sleepevents.services.network import load_checkpoint
from sleepevents.services.record_io import read_thresholds, write_detections

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("detect", help="Detect events in record files")
    parser.add_argument("records", nargs="+", help="Record files (.dsr)")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--thresholds", required=True, help="Thresholds JSON written by calibrate")
    parser.add_argument("--out", required=True, help="Detections file (JSON lines)")
    parser.add_argument("--stride", type=float, help="Window stride in seconds (default: one window)")
    parser.set_defaults(func=run)


def run(args, run_cfg: RunConfig) -> None:
    model = load_checkpoint(args.checkpoint)
    thresholds = read_thresholds(args.thresholds)
    records = load_records(args.records)
    check_model_rate(model, run_cfg.window_duration, records)
    detections = detect_records(
        model,
        records,
        grid_for(run_cfg),
        thresholds,
        run_cfg.evaluation.nms_iou,
        stride=args.stride,
        threads=run_cfg.threads,
    )
    write_detections(output_path(args.out), detections)
    print(args.out)
