import logging
from pathlib import Path

from sleepevents.models.configs import RunConfig
from sleepevents.services.experiments import grid_for
from sleepevents.services.network import init_model, save_checkpoint
from sleepevents.services.signals import normalize_dataset
from sleepevents.services.storage.storage import get_storage
from sleepevents.services.trainer import train

logger = logging.getLogger(__name__)

MODEL_FILE = "model.dsm"
LOG_FILE = "train_log.csv"
CONFIG_FILE = "config.json"


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train a detector on the train split of a dataset")
    parser.add_argument("--data", help="Dataset directory (default: paths.data_dir)")
    parser.add_argument("--out", help="Run directory (default: paths.out_dir)")
    parser.add_argument("--max-epochs", type=int, help="Override train.max_epochs")
    parser.set_defaults(func=run)


def run(args, run_cfg: RunConfig) -> None:
    if args.max_epochs is not None:
        run_cfg = run_cfg.model_copy(
            update={"train": run_cfg.train.model_copy(update={"max_epochs": args.max_epochs})}
        )
    train_cfg = run_cfg.train.model_copy(update={"seed": run_cfg.seed})
    out = Path(args.out or run_cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    dataset = normalize_dataset(get_storage(args.data or run_cfg.paths.data_dir).load_dataset())
    grid = grid_for(run_cfg)
    net_cfg = run_cfg.net_config(dataset.records[0].n_channels, dataset.n_labels, grid.n_defaults)
    model = init_model(net_cfg, seed=run_cfg.seed)

    best, log = train(
        model, grid, dataset.train, dataset.validation, train_cfg, run_cfg.loss, checkpoint_dir=out / "checkpoints"
    )
    save_checkpoint(out / MODEL_FILE, best)
    log.to_csv(out / LOG_FILE)
    (out / CONFIG_FILE).write_text(run_cfg.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Training artifacts written to {out}")
    print(out / MODEL_FILE)
