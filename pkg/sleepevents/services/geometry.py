"""Interval geometry: IoU, default events, target encoding, matching and NMS."""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from sleepevents.models.configs import MatchConfig
from sleepevents.models.models import Event, Interval
from sleepevents.utils.errors import InvalidOverlap, NonPositiveDuration

logger = logging.getLogger(__name__)

Scored = Tuple[Interval, float]


def iou(a: Interval, b: Interval) -> float:
    """Intersection over union of two time intervals (0 when the union is empty)."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(starts_a, ends_a, starts_b, ends_b) -> np.ndarray:
    """Pairwise IoU between two interval sets, shape (len(a), len(b))."""
    starts_a = np.asarray(starts_a, dtype=np.float64)[:, None]
    ends_a = np.asarray(ends_a, dtype=np.float64)[:, None]
    starts_b = np.asarray(starts_b, dtype=np.float64)[None, :]
    ends_b = np.asarray(ends_b, dtype=np.float64)[None, :]
    inter = np.clip(np.minimum(ends_a, ends_b) - np.maximum(starts_a, starts_b), 0.0, None)
    union = (ends_a - starts_a) + (ends_b - starts_b) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


class DefaultGrid(BaseModel):
    """N_d default events of one duration tiled over a window."""
    model_config = ConfigDict(frozen=True)

    window_duration: float
    default_duration: float
    overlap: float
    centers: Tuple[float, ...]

    @property
    def step(self) -> float:
        return self.default_duration * (1.0 - self.overlap)

    @property
    def n_defaults(self) -> int:
        return len(self.centers)

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64)

    @property
    def duration_array(self) -> np.ndarray:
        return np.full(self.n_defaults, self.default_duration, dtype=np.float64)

    @property
    def starts(self) -> np.ndarray:
        return self.center_array - 0.5 * self.default_duration

    @property
    def ends(self) -> np.ndarray:
        return self.center_array + 0.5 * self.default_duration

    def default(self, index: int) -> Tuple[float, float]:
        return self.centers[index], self.default_duration


def build_grid(window_duration: float, default_duration: float, overlap: float) -> DefaultGrid:
    """
    Tile defaults every ``default_duration * (1 - overlap)`` seconds.

    centers[i] = (i + 0.5) * step for i < round(window / step); defaults may
    overhang the window edges.
    """
    if not 0.0 <= overlap < 1.0:
        raise InvalidOverlap(f"overlap must lie in [0, 1), got {overlap}")
    if window_duration <= 0 or default_duration <= 0:
        raise NonPositiveDuration(
            f"window ({window_duration}) and default ({default_duration}) durations must be positive"
        )
    step = default_duration * (1.0 - overlap)
    n_defaults = max(1, int(np.floor(window_duration / step + 0.5)))
    centers = tuple(float((i + 0.5) * step) for i in range(n_defaults))
    logger.debug(f"Built default grid: {n_defaults} defaults of {default_duration} s every {step} s")
    return DefaultGrid(
        window_duration=window_duration,
        default_duration=default_duration,
        overlap=overlap,
        centers=centers,
    )


def encode(default: Tuple[float, float], truth: Tuple[float, float]) -> Tuple[float, float]:
    """Relative center offset and log duration ratio of a truth against a default."""
    (default_center, default_duration), (truth_center, truth_duration) = default, truth
    if default_duration <= 0 or truth_duration <= 0:
        raise NonPositiveDuration(f"durations must be positive, got {default_duration} and {truth_duration}")
    return (
        (truth_center - default_center) / default_duration,
        float(np.log(truth_duration / default_duration)),
    )


def encode_many(default_centers, default_durations, truth_centers, truth_durations) -> np.ndarray:
    """Vectorized :func:`encode`, shape (n, 2)."""
    default_durations = np.asarray(default_durations, dtype=np.float64)
    truth_durations = np.asarray(truth_durations, dtype=np.float64)
    if np.any(default_durations <= 0) or np.any(truth_durations <= 0):
        raise NonPositiveDuration("durations must be positive")
    return np.stack(
        [
            (np.asarray(truth_centers, dtype=np.float64) - default_centers) / default_durations,
            np.log(truth_durations / default_durations),
        ],
        axis=-1,
    )


def decode(default: Tuple[float, float], code: Tuple[float, float]) -> Interval:
    center, duration = default
    u, v = code
    new_center = center + u * duration
    new_duration = duration * float(np.exp(v))
    return Interval(new_center - 0.5 * new_duration, new_center + 0.5 * new_duration)


def decode_many(default_centers, default_durations, codes) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`decode`; returns (starts, ends)."""
    codes = np.asarray(codes, dtype=np.float64)
    centers = default_centers + codes[..., 0] * default_durations
    durations = default_durations * np.exp(codes[..., 1])
    return centers - 0.5 * durations, centers + 0.5 * durations


class Matching:
    """Default index -> truth index (into the list given to :func:`match`), -1 for background."""

    def __init__(self, assignment: np.ndarray):
        self.assignment = assignment

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.assignment >= 0)

    @property
    def negatives(self) -> np.ndarray:
        return np.flatnonzero(self.assignment < 0)

    def truth_for(self, index: int) -> Optional[int]:
        value = int(self.assignment[index])
        return value if value >= 0 else None

    def __len__(self) -> int:
        return len(self.assignment)


def match(grid: DefaultGrid, truths: Sequence[Event], cfg: Optional[MatchConfig] = None) -> Matching:
    """
    Two-stage matching of defaults to true events.

    Stage 1 walks truths by ascending start and gives each the free default
    with the highest IoU (lowest index on ties) when that IoU is positive.
    Stage 2 assigns every remaining default to its best truth when the IoU
    exceeds eta.
    """
    cfg = cfg or MatchConfig()
    assignment = np.full(grid.n_defaults, -1, dtype=np.int64)
    if not truths:
        return Matching(assignment)

    order = np.array(sorted(range(len(truths)), key=lambda j: (truths[j].start, j)), dtype=np.int64)
    ious = iou_matrix(
        grid.starts,
        grid.ends,
        [truths[j].start for j in order],
        [truths[j].end for j in order],
    )

    taken = np.zeros(grid.n_defaults, dtype=bool)
    for position, truth_index in enumerate(order):
        column = np.where(taken, -1.0, ious[:, position])
        best = int(np.argmax(column))
        if column[best] > 0.0:
            assignment[best] = truth_index
            taken[best] = True

    best_position = np.argmax(ious, axis=1)
    best_iou = ious[np.arange(grid.n_defaults), best_position]
    second_stage = ~taken & (best_iou > cfg.eta)
    assignment[second_stage] = order[best_position[second_stage]]
    return Matching(assignment)


def nms_indices(starts, ends, scores, iou_threshold: float) -> np.ndarray:
    """
    Greedy suppression; returns kept indices sorted by start.

    The highest score is kept first (earlier start on ties) and every
    remaining interval with IoU >= threshold against it is dropped.
    """
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if starts.size == 0:
        return np.zeros(0, dtype=np.int64)
    lengths = ends - starts
    order = np.lexsort((starts, -scores))
    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        inter = np.clip(np.minimum(ends[i], ends[rest]) - np.maximum(starts[i], starts[rest]), 0.0, None)
        union = lengths[i] + lengths[rest] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            overlap = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        order = rest[overlap < iou_threshold]
    keep = np.asarray(keep, dtype=np.int64)
    return keep[np.lexsort((-scores[keep], starts[keep]))]


def nms(events: Sequence[Scored], iou_threshold: float) -> List[Scored]:
    if not events:
        return []
    starts = [interval[0] for interval, _ in events]
    ends = [interval[1] for interval, _ in events]
    scores = [score for _, score in events]
    return [events[i] for i in nms_indices(starts, ends, scores, iou_threshold)]
