import logging

from sleepevents.models.configs import RunConfig
from sleepevents.services.storage.storage import get_storage
from sleepevents.services.synth import generate_dataset

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="Write a synthetic dataset and its split")
    parser.add_argument("--out", help="Dataset directory (default: paths.data_dir)")
    parser.add_argument("--n-records", type=int, default=10)
    parser.add_argument("--channels", type=int, help="Override synth.channels")
    parser.set_defaults(func=run)


def run(args, run_cfg: RunConfig) -> None:
    synth = run_cfg.synth
    if args.channels is not None:
        synth = synth.model_copy(update={"channels": args.channels})
    seed = args.seed if args.seed is not None else synth.seed
    out = args.out or run_cfg.paths.data_dir
    generate_dataset(synth, args.n_records, seed=seed, store=get_storage(out), threads=run_cfg.threads)
    logger.info(f"Synthetic dataset written to {out}")
    print(out)
