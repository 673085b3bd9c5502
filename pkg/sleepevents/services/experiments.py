"""Desk-scale experiments: one train/calibrate/test run and sweeps built on it."""
import logging
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence

import pandas as pd

from sleepevents.models.configs import EvalConfig, GridConfig, RunConfig
from sleepevents.models.models import Annotation, DetectionThresholds, EventDataset
from sleepevents.services.evaluation import MetricsReport, calibrate_thresholds, evaluate
from sleepevents.services.geometry import DefaultGrid, build_grid
from sleepevents.services.inference import detect_records
from sleepevents.services.network import DetectorModel, init_model
from sleepevents.services.signals import normalize_dataset
from sleepevents.services.synth import generate_dataset
from sleepevents.services.trainer import TrainLog, train
from sleepevents.utils.errors import InvalidConfig

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 0.3


class PipelineResult(NamedTuple):
    model: DetectorModel
    thresholds: DetectionThresholds
    report: MetricsReport
    log: TrainLog
    f1: Dict[int, float]


def grid_for(run_cfg: RunConfig) -> DefaultGrid:
    return build_grid(run_cfg.window_duration, run_cfg.grid.default_duration, run_cfg.grid.overlap)


def run_pipeline(
    run_cfg: RunConfig,
    dataset: EventDataset,
    delta: float = DEFAULT_DELTA,
    normalize: bool = True,
) -> PipelineResult:
    """Train on the train split, calibrate theta on validation at ``delta`` and score the test split."""
    run_cfg.check()
    if normalize:
        dataset = normalize_dataset(dataset)
    if not dataset.split.test:
        raise ValueError("the dataset split has no test records")
    rates = {record.sample_rate for record in dataset.records}
    if rates != {run_cfg.sample_rate}:
        raise InvalidConfig(f"records sampled at {sorted(rates)} Hz, configuration expects {run_cfg.sample_rate} Hz")
    grid = grid_for(run_cfg)
    n_labels = dataset.n_labels
    net_cfg = run_cfg.net_config(dataset.records[0].n_channels, n_labels, grid.n_defaults)
    model = init_model(net_cfg, seed=run_cfg.seed)

    best, log = train(model, grid, dataset.train, dataset.validation, run_cfg.train, run_cfg.loss)
    thresholds = calibrate_thresholds(best, dataset.validation, grid, delta, run_cfg.evaluation, run_cfg.threads)

    test = dataset.test
    detections = detect_records(
        best, [record for record, _ in test], grid, thresholds, run_cfg.evaluation.nms_iou, threads=run_cfg.threads
    )
    annotations = {record.id: annotation for record, annotation in test}
    eval_cfg = EvalConfig(deltas=[delta], theta_grid=run_cfg.evaluation.theta_grid, nms_iou=run_cfg.evaluation.nms_iou)
    labels = list(range(1, n_labels + 1))
    report = evaluate(detections, annotations, eval_cfg, labels=labels, threads=run_cfg.threads)
    f1 = {label: report.mean_f1(delta, label) for label in labels}
    logger.info(f"Pipeline finished: test F1@{delta} {f1}")
    return PipelineResult(best, thresholds, report, log, f1)


def select_label(dataset: EventDataset, label: int) -> EventDataset:
    """Keep only ``label`` events, relabelled as 1."""
    annotations = [
        Annotation(
            record_id=a.record_id,
            events=[e.model_copy(update={"label": 1}) for e in a.for_label(label)],
        )
        for a in dataset.annotations
    ]
    return dataset._replace(annotations=annotations)


def compare_joint_vs_separate(
    run_cfg: RunConfig,
    dataset: EventDataset,
    delta: float = DEFAULT_DELTA,
) -> pd.DataFrame:
    """Test F1 of one multi-label model against one single-label model per label."""
    dataset = normalize_dataset(dataset)
    joint = run_pipeline(run_cfg, dataset, delta, normalize=False)
    rows = []
    for label in sorted(joint.f1):
        separate = run_pipeline(run_cfg, select_label(dataset, label), delta, normalize=False)
        rows.append({
            "label": label,
            "joint_f1": joint.f1[label],
            "separate_f1": separate.f1[1],
            "difference": joint.f1[label] - separate.f1[1],
        })
    return pd.DataFrame(rows, columns=["label", "joint_f1", "separate_f1", "difference"])


def _sweep(
    run_cfg: RunConfig,
    dataset: Optional[EventDataset],
    column: str,
    values: Sequence,
    configure: Callable[[RunConfig, Any], RunConfig],
    delta: float,
    regenerate: Optional[Callable[[RunConfig], EventDataset]] = None,
) -> pd.DataFrame:
    """One pipeline run per value; ``regenerate`` builds a fresh dataset from each configured run."""
    if dataset is not None:
        dataset = normalize_dataset(dataset)
    rows: List[dict] = []
    for value in values:
        logger.info(f"Sweep {column}={value}")
        cfg = configure(run_cfg, value)
        data = normalize_dataset(regenerate(cfg)) if regenerate else dataset
        result = run_pipeline(cfg, data, delta, normalize=False)
        rows.extend({column: value, "label": label, "f1": f1} for label, f1 in sorted(result.f1.items()))
    return pd.DataFrame(rows, columns=[column, "label", "f1"])


def sweep_positive_fraction(
    run_cfg: RunConfig,
    dataset: EventDataset,
    fractions: Sequence[float] = (0.5, 1.0),
    delta: float = DEFAULT_DELTA,
) -> pd.DataFrame:
    """Test F1 as a function of the share of event-holding windows in each batch."""
    def configure(cfg: RunConfig, fraction: float) -> RunConfig:
        return cfg.model_copy(update={"train": cfg.train.model_copy(update={"positive_fraction": fraction})})

    return _sweep(run_cfg, dataset, "positive_fraction", fractions, configure, delta)


def sweep_default_duration(
    run_cfg: RunConfig,
    dataset: EventDataset,
    durations: Sequence[float],
    overlap: float = 0.5,
    delta: float = DEFAULT_DELTA,
) -> pd.DataFrame:
    def configure(cfg: RunConfig, duration: float) -> RunConfig:
        return cfg.model_copy(update={"grid": GridConfig(default_duration=duration, overlap=overlap)})

    return _sweep(run_cfg, dataset, "default_duration", durations, configure, delta)


def learning_curve(
    run_cfg: RunConfig,
    dataset: EventDataset,
    train_sizes: Optional[Sequence[int]] = None,
    delta: float = DEFAULT_DELTA,
) -> pd.DataFrame:
    """Test F1 when training on the first n train records, for each n."""
    dataset = normalize_dataset(dataset)
    train_ids = dataset.split.train
    sizes = list(train_sizes) if train_sizes else list(range(1, len(train_ids) + 1))
    rows: List[dict] = []
    for size in sizes:
        if not 1 <= size <= len(train_ids):
            raise ValueError(f"train size {size} outside [1, {len(train_ids)}]")
        subset = dataset._replace(split=dataset.split.model_copy(update={"train": train_ids[:size]}))
        result = run_pipeline(run_cfg, subset, delta, normalize=False)
        rows.extend({"n_train": size, "label": label, "f1": f1} for label, f1 in sorted(result.f1.items()))
    return pd.DataFrame(rows, columns=["n_train", "label", "f1"])


def sweep_channels(
    run_cfg: RunConfig,
    channel_counts: Sequence[int],
    n_records: int,
    seed: Optional[int] = None,
    delta: float = DEFAULT_DELTA,
) -> pd.DataFrame:
    """Test F1 against the number of EEG channels, synthesizing a dataset per count."""
    def configure(cfg: RunConfig, channels: int) -> RunConfig:
        return cfg.model_copy(update={"synth": cfg.synth.model_copy(update={"channels": channels})})

    def regenerate(cfg: RunConfig) -> EventDataset:
        return generate_dataset(cfg.synth, n_records, seed=seed, threads=cfg.threads)

    return _sweep(run_cfg, None, "channels", channel_counts, configure, delta, regenerate)
