"""By-event metrics and F1-maximizing threshold calibration."""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from sleepevents.config import Config
from sleepevents.models.configs import EvalConfig
from sleepevents.models.models import Annotation, Detection, DetectionThresholds, Event, Record
from sleepevents.services.geometry import DefaultGrid, iou_matrix
from sleepevents.services.inference import Proposals, propose_records, select_detections
from sleepevents.services.network import DetectorModel
from sleepevents.utils.errors import MissingRecord

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["record_id", "label", "delta", "precision", "recall", "f1", "tp", "fp", "fn"]


class MatchCounts(NamedTuple):
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _bounds(items) -> Tuple[np.ndarray, np.ndarray]:
    starts = np.asarray([item.start for item in items], dtype=np.float64)
    ends = np.asarray([item.end for item in items], dtype=np.float64)
    return starts, ends


def match_detections(predictions: Sequence[Detection], truths: Sequence[Event], delta: float) -> MatchCounts:
    """
    Greedy one-to-one matching.

    Predictions are visited by descending probability (earlier start on
    ties); each claims the unclaimed truth of highest IoU when that IoU is
    at least ``delta``.
    """
    if not predictions or not truths:
        return MatchCounts(0, len(predictions), len(truths))
    pred_starts, pred_ends = _bounds(predictions)
    truth_starts, truth_ends = _bounds(truths)
    ious = iou_matrix(pred_starts, pred_ends, truth_starts, truth_ends)
    probs = np.asarray([p.probability for p in predictions])
    claimed = np.zeros(len(truths), dtype=bool)
    tp = 0
    for i in np.lexsort((pred_starts, -probs)):
        row = np.where(claimed, -1.0, ious[i])
        best = int(np.argmax(row))
        if row[best] >= delta:
            claimed[best] = True
            tp += 1
    return MatchCounts(tp, len(predictions) - tp, len(truths) - tp)


def optimal_tp(predictions: Sequence[Detection], truths: Sequence[Event], delta: float) -> int:
    """Largest number of one-to-one pairs with IoU >= delta."""
    if not predictions or not truths:
        return 0
    ious = iou_matrix(*_bounds(predictions), *_bounds(truths))
    eligible = (ious >= delta).astype(np.float64)
    rows, cols = linear_sum_assignment(eligible, maximize=True)
    return int(eligible[rows, cols].sum())


# ---------- Reports ----------
class MetricsReport:
    """Per (record, label, delta) metrics and their unweighted means across records."""

    def __init__(self, rows: pd.DataFrame):
        self.rows = rows

    def summary(self) -> pd.DataFrame:
        """Mean precision, recall and F1 per (delta, label), each record weighted equally."""
        return (
            self.rows.groupby(["delta", "label"], as_index=False)[["precision", "recall", "f1"]]
            .mean()
            .sort_values(["delta", "label"], ignore_index=True)
        )

    def f1_vs_delta(self) -> pd.DataFrame:
        table = self.summary().pivot(index="delta", columns="label", values="f1")
        table.columns = [f"f1_label{label}" for label in table.columns]
        return table.reset_index()

    def mean_f1(self, delta: float, label: int) -> float:
        summary = self.summary()
        row = summary[np.isclose(summary["delta"], delta) & (summary["label"] == label)]
        return float(row["f1"].iloc[0]) if len(row) else 0.0

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.rows.to_csv(path, index=False)
        return path

    def write_summary(self, path: Union[str, Path]) -> Path:
        """JSON ``{"<delta>": {"<label>": {"precision", "recall", "f1"}}}``."""
        nested: Dict[str, Dict[str, dict]] = {}
        for row in self.summary().itertuples(index=False):
            nested.setdefault(f"{row.delta:g}", {})[str(int(row.label))] = {
                "precision": float(row.precision),
                "recall": float(row.recall),
                "f1": float(row.f1),
            }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(nested, indent=2), encoding="utf-8")
        return path

    def write_f1_table(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.f1_vs_delta().to_csv(path, index=False)
        return path


def _record_rows(
    record_id: str,
    predictions: List[Detection],
    truths: List[Event],
    labels: Iterable[int],
    deltas: Iterable[float],
) -> List[dict]:
    rows = []
    for label in labels:
        label_preds = [p for p in predictions if p.label == label]
        label_truths = [t for t in truths if t.label == label]
        for delta in deltas:
            counts = match_detections(label_preds, label_truths, delta)
            best = optimal_tp(label_preds, label_truths, delta)
            if best != counts.tp:
                logger.debug(f"{record_id}, label {label}, delta {delta}: greedy {counts.tp} TP, optimal {best}")
            rows.append({
                "record_id": record_id,
                "label": label,
                "delta": delta,
                "precision": counts.precision,
                "recall": counts.recall,
                "f1": counts.f1,
                "tp": counts.tp,
                "fp": counts.fp,
                "fn": counts.fn,
            })
    return rows


def evaluate(
    predictions: Dict[str, List[Detection]],
    annotations: Dict[str, Annotation],
    cfg: Optional[EvalConfig] = None,
    labels: Optional[Sequence[int]] = None,
    threads: Optional[int] = None,
) -> MetricsReport:
    """
    Score every annotated record at every delta and label.

    Records without predictions count as empty predictions; predictions for
    a record that has no annotation raise MissingRecord.
    """
    cfg = cfg or EvalConfig()
    unknown = sorted(set(predictions) - set(annotations))
    if unknown:
        logger.error(f"Predictions for records without annotations: {unknown}")
        raise MissingRecord(f"no annotation for record(s) {', '.join(unknown)}")
    if labels is None:
        labels = sorted(
            {e.label for a in annotations.values() for e in a.events}
            | {d.label for ds in predictions.values() for d in ds}
        )
    record_ids = sorted(annotations)
    with ThreadPoolExecutor(max_workers=threads or Config.THREADS) as pool:
        futures = [
            pool.submit(
                _record_rows, record_id, predictions.get(record_id, []), annotations[record_id].events, labels, cfg.deltas
            )
            for record_id in record_ids
        ]
        rows = [row for future in futures for row in future.result()]
    logger.info(f"Evaluated {len(record_ids)} records, labels {list(labels)}, {len(cfg.deltas)} deltas")
    return MetricsReport(pd.DataFrame(rows, columns=METRIC_COLUMNS))


# ---------- Calibration ----------
def calibrate_from_proposals(
    proposals: Dict[str, Proposals],
    annotations: Dict[str, Annotation],
    delta: float,
    labels: Sequence[int],
    cfg: Optional[EvalConfig] = None,
) -> Tuple[DetectionThresholds, pd.DataFrame]:
    """
    Grid search of theta per label maximizing the mean F1 at ``delta``;
    ties go to the lower theta. Also returns the F1 of every grid point.
    """
    cfg = cfg or EvalConfig()
    theta: Dict[int, float] = {}
    curve = []
    for label in labels:
        best_theta, best_f1 = None, -1.0
        for value in sorted(cfg.theta_grid):
            scores = []
            for record_id, annotation in annotations.items():
                detections = select_detections(proposals[record_id], DetectionThresholds(theta={label: value}), cfg.nms_iou)
                scores.append(match_detections(detections, annotation.for_label(label), delta).f1)
            f1 = float(np.mean(scores)) if scores else 0.0
            curve.append({"label": label, "theta": value, "f1": f1})
            if f1 > best_f1:
                best_theta, best_f1 = value, f1
        theta[label] = best_theta
        logger.info(f"Label {label}: theta {best_theta} gives mean F1 {best_f1:.3f} at delta {delta}")
    return DetectionThresholds(theta=theta, delta=delta), pd.DataFrame(curve, columns=["label", "theta", "f1"])


def _validation_inputs(
    model: DetectorModel,
    validation: Sequence[Tuple[Record, Annotation]],
    grid: DefaultGrid,
    threads: Optional[int],
) -> Tuple[Dict[str, Proposals], Dict[str, Annotation]]:
    if not validation:
        raise ValueError("calibration needs at least one validation record")
    proposals = propose_records(model, [record for record, _ in validation], grid, threads=threads)
    annotations = {record.id: annotation for record, annotation in validation}
    return proposals, annotations


def calibrate_thresholds(
    model: DetectorModel,
    validation: Sequence[Tuple[Record, Annotation]],
    grid: DefaultGrid,
    delta: float,
    cfg: Optional[EvalConfig] = None,
    threads: Optional[int] = None,
) -> DetectionThresholds:
    proposals, annotations = _validation_inputs(model, validation, grid, threads)
    labels = range(1, model.cfg.n_labels + 1)
    thresholds, _ = calibrate_from_proposals(proposals, annotations, delta, labels, cfg)
    return thresholds


def calibrate_thresholds_all_deltas(
    model: DetectorModel,
    validation: Sequence[Tuple[Record, Annotation]],
    grid: DefaultGrid,
    cfg: Optional[EvalConfig] = None,
    threads: Optional[int] = None,
) -> Dict[float, DetectionThresholds]:
    """One calibration per delta of the evaluation grid, sharing one network pass."""
    cfg = cfg or EvalConfig()
    proposals, annotations = _validation_inputs(model, validation, grid, threads)
    labels = range(1, model.cfg.n_labels + 1)
    return {
        delta: calibrate_from_proposals(proposals, annotations, delta, labels, cfg)[0]
        for delta in cfg.deltas
    }
