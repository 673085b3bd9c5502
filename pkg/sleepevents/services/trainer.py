"""Balanced window sampling and the SGD training loop."""
import logging
import math
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from sleepevents.config import Config
from sleepevents.models.configs import LossConfig, TrainConfig
from sleepevents.models.models import Annotation, Record, Sample
from sleepevents.services.geometry import DefaultGrid
from sleepevents.services.loss import batch_loss, compute_loss
from sleepevents.services.network import DetectorModel, backward, forward, save_checkpoint
from sleepevents.services.signals import extract_sample
from sleepevents.utils.errors import NonFiniteGradient, RecordTooShort, SamplingExhausted

logger = logging.getLogger(__name__)

Dataset = Sequence[Tuple[Record, Annotation]]
Velocity = Dict[str, np.ndarray]

LOG_COLUMNS = ["epoch", "train_loc", "train_cls", "val_loc", "val_cls", "lr", "seconds"]


# ---------- Sampling ----------
def sample_batch(
    dataset: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
    max_rejections: int = Config.MAX_REJECTIONS,
) -> List[Sample]:
    """
    Draw ``batch_size`` windows, ``round(positive_fraction * batch_size)`` of
    them holding at least one event, by rejection over uniformly chosen
    records and start samples. The batch order is shuffled.
    """
    eligible = [
        (record, annotation)
        for record, annotation in dataset
        if record.n_samples >= int(round(cfg.window_duration * record.sample_rate))
    ]
    if not eligible:
        raise SamplingExhausted("no training record is at least one window long")

    n_positive = int(round(cfg.positive_fraction * cfg.batch_size))
    wanted = [True] * n_positive + [False] * (cfg.batch_size - n_positive)
    samples = []
    for positive in wanted:
        rejections = 0
        while True:
            record, annotation = eligible[int(rng.integers(len(eligible)))]
            n_times = int(round(cfg.window_duration * record.sample_rate))
            first = int(rng.integers(0, record.n_samples - n_times + 1))
            sample = extract_sample(record, annotation, first / record.sample_rate, cfg.window_duration)
            if sample.is_positive == positive:
                samples.append(sample)
                break
            rejections += 1
            if rejections >= max_rejections:
                kind = "positive" if positive else "negative"
                logger.error(f"Gave up drawing a {kind} window after {rejections} rejections")
                raise SamplingExhausted(f"no {kind} window found after {rejections} consecutive rejections")
    order = rng.permutation(len(samples))
    return [samples[i] for i in order]


def tile_validation(dataset: Dataset, window_duration: float) -> List[Sample]:
    """Non-overlapping windows from t = 0 over each record; a trailing partial window is dropped."""
    samples = []
    for record, annotation in dataset:
        n_times = int(round(window_duration * record.sample_rate))
        for first in range(0, record.n_samples - n_times + 1, n_times):
            samples.append(extract_sample(record, annotation, first / record.sample_rate, window_duration))
    return samples


# ---------- Optimizer ----------
def sgd_step(
    model: DetectorModel,
    gradients: Dict[str, np.ndarray],
    state: Optional[Velocity],
    lr: float,
    momentum: float,
) -> Tuple[DetectorModel, Velocity]:
    """v <- momentum * v + g; p <- p - lr * v, per parameter. Updates the model in place."""
    for name, grad in gradients.items():
        if not np.isfinite(grad).all():
            logger.error(f"Non-finite gradient for {name}")
            raise NonFiniteGradient(f"gradient of {name} is not finite")
    state = {} if state is None else state
    for name, grad in gradients.items():
        velocity = momentum * state.get(name, 0.0) + grad
        state[name] = velocity
        model.params[name] = (model.params[name] - lr * velocity).astype(model.dtype, copy=False)
    model.bump_version()
    return model, state


# ---------- Training log ----------
class TrainLog:
    """One row per completed epoch."""

    def __init__(self):
        self.rows: List[dict] = []

    def append(self, **row) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=LOG_COLUMNS)

    def val_losses(self) -> np.ndarray:
        return np.asarray([row["val_loc"] + row["val_cls"] for row in self.rows])

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame.to_csv(path, index=False)
        return path


# ---------- Loop ----------
class Trainer:
    """
    Mini-batch SGD with momentum, plateau learning-rate decay and early stopping.

    An epoch is ``steps_per_epoch`` balanced batches; after each epoch the
    loss over a fixed tiling of the validation records decides whether the
    model improved. Subclasses may override :meth:`train_epoch` and
    :meth:`validate`.
    """

    def __init__(
        self,
        model: DetectorModel,
        grid: DefaultGrid,
        train_data: Dataset,
        validation_data: Dataset,
        cfg: Optional[TrainConfig] = None,
        loss_cfg: Optional[LossConfig] = None,
        checkpoint_dir: Optional[Union[str, Path]] = None,
        eval_batch_size: int = 64,
    ):
        self.model = model
        self.grid = grid
        self.train_data = list(train_data)
        self.validation_data = list(validation_data)
        self.cfg = cfg or TrainConfig()
        self.loss_cfg = loss_cfg or LossConfig()
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.eval_batch_size = eval_batch_size
        self.rng = np.random.default_rng(self.cfg.seed)
        self.lr = self.cfg.lr
        self.velocity: Velocity = {}
        self.log = TrainLog()
        self._validation_windows: Optional[List[Sample]] = None

    @property
    def steps_per_epoch(self) -> int:
        if self.cfg.steps_per_epoch is not None:
            return self.cfg.steps_per_epoch
        n_events = sum(len(annotation.events) for _, annotation in self.train_data)
        return max(1, math.ceil(n_events / self.cfg.batch_size))

    @property
    def validation_windows(self) -> List[Sample]:
        if self._validation_windows is None:
            self._validation_windows = tile_validation(self.validation_data, self.cfg.window_duration)
            logger.info(f"Validation tiling: {len(self._validation_windows)} windows")
        return self._validation_windows

    def train_step(self) -> Tuple[float, float]:
        samples = sample_batch(self.train_data, self.cfg, self.rng)
        batch = np.stack([sample.data for sample in samples])
        output, cache = forward(self.model, batch, mode="train")
        loss = batch_loss(output, self.grid, [sample.events for sample in samples], self.loss_cfg)
        grads = backward(self.model, cache, loss.d_loc, loss.d_probs)
        sgd_step(self.model, grads.params, self.velocity, self.lr, self.cfg.momentum)
        return loss.loc_loss, loss.cls_loss

    def train_epoch(self, epoch: int) -> Tuple[float, float]:
        """Mean (loc, cls) training loss over the epoch's steps."""
        losses = []
        for _ in tqdm(range(self.steps_per_epoch), desc=f"epoch {epoch}", leave=False, disable=None):
            losses.append(self.train_step())
        loc, cls = np.mean(losses, axis=0)
        return float(loc), float(cls)

    def validate(self) -> Tuple[float, float]:
        """Mean (loc, cls) loss over the validation tiling, eval-mode batch norm."""
        windows = self.validation_windows
        if not windows:
            raise RecordTooShort("no validation record is at least one window long")
        loc_total = cls_total = 0.0
        for first in range(0, len(windows), self.eval_batch_size):
            chunk = windows[first:first + self.eval_batch_size]
            output, _ = forward(self.model, np.stack([w.data for w in chunk]), mode="eval")
            for i, window in enumerate(chunk):
                breakdown = compute_loss(output.sample(i), self.grid, window.events, self.loss_cfg)
                loc_total += breakdown.loc_loss
                cls_total += breakdown.cls_loss
        return loc_total / len(windows), cls_total / len(windows)

    def fit(self) -> Tuple[DetectorModel, TrainLog]:
        if not self.train_data or not self.validation_data:
            raise ValueError("train and validation datasets must be non-empty")
        logger.info(
            f"Training for up to {self.cfg.max_epochs} epochs of {self.steps_per_epoch} steps "
            f"(batch {self.cfg.batch_size}, lr {self.lr})"
        )
        best_loss = math.inf
        best_model = self.model.copy()
        since_best = 0
        since_decay = 0
        for epoch in range(1, self.cfg.max_epochs + 1):
            started = time.perf_counter()
            train_loc, train_cls = self.train_epoch(epoch)
            val_loc, val_cls = self.validate()
            val_loss = val_loc + val_cls
            self.log.append(
                epoch=epoch,
                train_loc=train_loc,
                train_cls=train_cls,
                val_loc=val_loc,
                val_cls=val_cls,
                lr=self.lr,
                seconds=time.perf_counter() - started,
            )
            logger.info(
                f"Epoch {epoch}: train {train_loc + train_cls:.4f} (loc {train_loc:.4f}), "
                f"validation {val_loss:.4f} (loc {val_loc:.4f}), lr {self.lr:g}"
            )

            if val_loss < best_loss:
                best_loss = val_loss
                best_model = self.model.copy()
                since_best = since_decay = 0
                if self.checkpoint_dir is not None:
                    save_checkpoint(self.checkpoint_dir / "best.dsm", best_model)
                continue

            since_best += 1
            since_decay += 1
            if since_best >= self.cfg.early_stop_patience:
                logger.info(f"Early stopping at epoch {epoch}: no improvement for {since_best} epochs")
                break
            if since_decay >= self.cfg.plateau_patience:
                self.lr *= self.cfg.lr_decay_factor
                since_decay = 0
                logger.info(f"Validation plateau, learning rate decayed to {self.lr:g}")

        logger.info(f"Training finished: best validation loss {best_loss:.4f}")
        return best_model, self.log


def train(
    model: DetectorModel,
    grid: DefaultGrid,
    train_data: Dataset,
    validation_data: Dataset,
    cfg: Optional[TrainConfig] = None,
    loss_cfg: Optional[LossConfig] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
) -> Tuple[DetectorModel, TrainLog]:
    """Train ``model`` in place and return a copy of its best-validation state with the log."""
    return Trainer(model, grid, train_data, validation_data, cfg, loss_cfg, checkpoint_dir).fit()
