"""Consensus annotations from several scorers."""
import logging
from typing import List, Optional, Sequence

import numpy as np

from sleepevents.models.configs import ConsensusConfig
from sleepevents.models.models import Annotation, Event
from sleepevents.utils.errors import OutOfRange

logger = logging.getLogger(__name__)

_TOLERANCE = 1e-9


def _midpoints(n_steps: int, resolution: float) -> np.ndarray:
    return (np.arange(n_steps) + 0.5) * resolution


def events_to_binary(events: Sequence[Event], n_steps: int, resolution: float) -> np.ndarray:
    """y[i] = 1 iff the midpoint of step i lies in [start, end) of some event."""
    span = n_steps * resolution
    y = np.zeros(n_steps, dtype=np.int8)
    mids = _midpoints(n_steps, resolution)
    for event in events:
        if event.start < -_TOLERANCE or event.end > span + _TOLERANCE:
            raise OutOfRange(f"event [{event.start}, {event.end}] s lies outside [0, {span}] s")
        lo = np.searchsorted(mids, event.start, side="left")
        hi = np.searchsorted(mids, event.end, side="left")
        y[lo:hi] = 1
    return y


def binary_to_events(y: np.ndarray, resolution: float, label: int = 1) -> List[Event]:
    """Each maximal run of ones becomes one event spanning its steps."""
    padded = np.concatenate([[0], np.asarray(y, dtype=np.int8), [0]])
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [Event.from_bounds(s * resolution, e * resolution, label) for s, e in zip(starts, ends)]


def consensus_events(
    scorers: Sequence[Annotation],
    kappa: float,
    n_steps: int,
    resolution: float,
    record_id: Optional[str] = None,
) -> Annotation:
    """
    Keep the steps marked by at least a fraction ``kappa`` of the scorers,
    label by label, and turn the kept runs back into events.
    """
    ConsensusConfig(kappa=kappa, resolution=resolution)
    if not scorers:
        raise ValueError("consensus needs at least one scorer")
    record_id = record_id or scorers[0].record_id
    labels = sorted({label for annotation in scorers for label in annotation.labels})
    events: List[Event] = []
    for label in labels:
        counts = sum(events_to_binary(a.for_label(label), n_steps, resolution).astype(np.int64) for a in scorers)
        kept = counts >= kappa * len(scorers) - _TOLERANCE
        events.extend(binary_to_events(kept, resolution, label))
    logger.info(f"Consensus of {len(scorers)} scorers at kappa={kappa}: {len(events)} events")
    return Annotation(record_id=record_id, events=events)
