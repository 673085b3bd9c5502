"""Record-scale detection: tile, predict, threshold, suppress, clip."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from tqdm import tqdm

from sleepevents.config import Config
from sleepevents.models.models import Detection, DetectionThresholds, Interval, Record
from sleepevents.services.geometry import DefaultGrid, nms_indices
from sleepevents.services.network import DetectorModel, decode_outputs, forward
from sleepevents.utils.errors import RecordTooShort, ShapeMismatch

logger = logging.getLogger(__name__)


class Tile(NamedTuple):
    start: float  # seconds
    data: np.ndarray  # C x T
    padded: bool


class Proposals(NamedTuple):
    """Every non-background candidate of a record, in record coordinates."""
    record_id: str
    duration: float
    labels: np.ndarray
    probs: np.ndarray
    starts: np.ndarray
    ends: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def tile_record(record: Record, window_duration: float, stride: Optional[float] = None) -> List[Tile]:
    """
    Consecutive windows from t = 0, every ``stride`` seconds (default: one
    window). The last window reaches the record end; when it runs past it,
    it is zero-padded to T samples and flagged.
    """
    n_times = int(round(window_duration * record.sample_rate))
    if record.n_samples < n_times:
        raise RecordTooShort(
            f"record {record.id} lasts {record.duration} s, shorter than one {window_duration} s window"
        )
    step = n_times if stride is None else int(round(stride * record.sample_rate))
    if step < 1:
        raise ValueError(f"stride must cover at least one sample, got {stride}")

    tiles = []
    first = 0
    while True:
        data = record.data[:, first:first + n_times]
        padded = data.shape[1] < n_times
        if padded:
            data = np.pad(data, ((0, 0), (0, n_times - data.shape[1])))
        tiles.append(Tile(first / record.sample_rate, data, padded))
        if first + n_times >= record.n_samples:
            break
        first += step
    return tiles


def propose_record(
    model: DetectorModel,
    record: Record,
    grid: DefaultGrid,
    stride: Optional[float] = None,
    batch_size: int = 64,
) -> Proposals:
    """Run the network over every tile; candidates starting past the record end are dropped."""
    if record.n_channels != model.cfg.n_channels:
        raise ShapeMismatch(f"record {record.id} has {record.n_channels} channels, model expects {model.cfg.n_channels}")
    tiles = tile_record(record, grid.window_duration, stride)
    labels, probs, starts, ends = [], [], [], []
    for first in range(0, len(tiles), batch_size):
        chunk = tiles[first:first + batch_size]
        output, _ = forward(model, np.stack([tile.data for tile in chunk]), mode="eval")
        tile_starts, tile_ends, tile_labels, tile_probs = decode_outputs(output, grid)
        offsets = np.asarray([tile.start for tile in chunk])[:, None]
        keep = tile_labels != 0
        labels.append(tile_labels[keep])
        probs.append(tile_probs[keep])
        starts.append((tile_starts + offsets)[keep])
        ends.append((tile_ends + offsets)[keep])

    starts = np.concatenate(starts)
    inside = starts < record.duration
    proposals = Proposals(
        record_id=record.id,
        duration=record.duration,
        labels=np.concatenate(labels)[inside].astype(np.int64),
        probs=np.concatenate(probs)[inside],
        starts=starts[inside],
        ends=np.concatenate(ends)[inside],
    )
    logger.debug(f"Record {record.id}: {len(tiles)} tiles, {len(proposals)} candidates")
    return proposals


def select_detections(
    proposals: Proposals,
    thresholds: DetectionThresholds,
    nms_iou: float = Config.NMS_IOU,
) -> List[Detection]:
    """
    Keep candidates with probability >= theta of their label, clip them to
    the record, suppress per label and sort by start. Labels without a
    threshold are dropped.
    """
    detections = []
    starts_all = np.clip(proposals.starts, 0.0, proposals.duration)
    ends_all = np.clip(proposals.ends, 0.0, proposals.duration)
    for label in np.unique(proposals.labels):
        label = int(label)
        theta = thresholds.theta.get(label)
        if theta is None:
            continue
        mask = (proposals.labels == label) & (proposals.probs >= theta) & (ends_all > starts_all)
        starts, ends, probs = starts_all[mask], ends_all[mask], proposals.probs[mask]
        for i in nms_indices(starts, ends, probs, nms_iou):
            detections.append(
                Detection(
                    interval=Interval(float(starts[i]), float(ends[i])),
                    label=label,
                    probability=min(float(probs[i]), 1.0),
                )
            )
    detections.sort(key=lambda d: (d.start, d.label, -d.probability))
    return detections


def detect_record(
    model: DetectorModel,
    record: Record,
    grid: DefaultGrid,
    thresholds: DetectionThresholds,
    nms_iou: float = Config.NMS_IOU,
    stride: Optional[float] = None,
) -> List[Detection]:
    return select_detections(propose_record(model, record, grid, stride), thresholds, nms_iou)


def propose_records(
    model: DetectorModel,
    records: Sequence[Record],
    grid: DefaultGrid,
    stride: Optional[float] = None,
    threads: Optional[int] = None,
) -> Dict[str, Proposals]:
    """Proposals for many records, computed on a thread pool; keys follow ``records`` order."""
    with ThreadPoolExecutor(max_workers=threads or Config.THREADS) as pool:
        futures = [pool.submit(propose_record, model, record, grid, stride) for record in records]
        results = [future.result() for future in tqdm(futures, desc="detect", leave=False, disable=None)]
    return {proposals.record_id: proposals for proposals in results}


def detect_records(
    model: DetectorModel,
    records: Sequence[Record],
    grid: DefaultGrid,
    thresholds: DetectionThresholds,
    nms_iou: float = Config.NMS_IOU,
    stride: Optional[float] = None,
    threads: Optional[int] = None,
) -> Dict[str, List[Detection]]:
    proposals = propose_records(model, records, grid, stride, threads)
    detections = {record_id: select_detections(p, thresholds, nms_iou) for record_id, p in proposals.items()}
    logger.info(f"Detected {sum(len(d) for d in detections.values())} events in {len(detections)} records")
    return detections
