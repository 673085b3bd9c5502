import logging
import math

from sleepevents.commands.common import output_path
from sleepevents.models.configs import RunConfig
from sleepevents.services.consensus import consensus_events
from sleepevents.services.record_io import read_annotation, read_record, write_annotation

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("consensus", help="Merge several scorers' annotations of one record")
    parser.add_argument("annotations", nargs="+", help="One annotation file per scorer")
    parser.add_argument("--kappa", type=float, required=True, help="Share of scorers needed to keep a step")
    span = parser.add_mutually_exclusive_group(required=True)
    span.add_argument("--record", help="Record file giving the span and sample rate")
    span.add_argument("--duration", type=float, help="Record duration in seconds")
    parser.add_argument("--resolution", type=float, help="Step in seconds (default: one sample)")
    parser.add_argument("--record-id", help="Record id of the output (default: the first scorer's)")
    parser.add_argument("--out", required=True)
    parser.set_defaults(func=run)


def run(args, run_cfg: RunConfig) -> None:
    if args.record:
        record = read_record(args.record)
        duration, sample_rate = record.duration, record.sample_rate
        record_id = args.record_id or record.id
    else:
        duration, sample_rate = args.duration, run_cfg.sample_rate
        record_id = args.record_id
    resolution = args.resolution or 1.0 / sample_rate
    n_steps = math.ceil(duration / resolution - 1e-9)
    scorers = [read_annotation(path) for path in args.annotations]
    consensus = consensus_events(scorers, args.kappa, n_steps, resolution, record_id)
    write_annotation(output_path(args.out), consensus)
    print(args.out)
