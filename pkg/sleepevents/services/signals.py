import logging
from typing import List

import numpy as np

from sleepevents.models.models import Annotation, Event, EventDataset, Record, Sample
from sleepevents.utils.errors import OutOfBounds, ZeroVariance

logger = logging.getLogger(__name__)

# Minimum share of an event's duration that must fall inside a window for
# the event to stay labelled in that window.
INCLUSION_FRACTION = 0.5
_TOLERANCE = 1e-9


def normalize_record(record: Record) -> Record:
    """
    Center and standardize every channel with statistics of the full recording.

    Returns a new record with the same dtype as the input.
    """
    data = record.data.astype(np.float64)
    mean = data.mean(axis=1, keepdims=True)
    centered = data - mean
    std = np.sqrt(np.mean(centered ** 2, axis=1, keepdims=True))
    for channel, value in zip(record.channel_names, std[:, 0]):
        if value == 0.0:
            logger.error(f"Cannot normalize record {record.id}: channel {channel} is constant")
            raise ZeroVariance(channel)
    normalized = (centered / std).astype(record.data.dtype)
    logger.debug(f"Normalized record {record.id} ({record.n_channels} channels)")
    return record.model_copy(update={"data": _readonly(normalized)})


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def clip_events(events: List[Event], window_start: float, window_end: float) -> List[Event]:
    """Keep events with at least half their duration in the window, clipped and shifted."""
    kept = []
    for event in events:
        if event.end <= window_start or event.start >= window_end:
            continue
        start = max(event.start, window_start)
        end = min(event.end, window_end)
        if (end - start) / event.duration + _TOLERANCE < INCLUSION_FRACTION:
            continue
        kept.append(Event.from_bounds(start - window_start, end - window_start, event.label))
    return kept


def extract_sample(
    record: Record,
    annotation: Annotation,
    window_start: float,
    window_duration: float,
) -> Sample:
    """
    Slice a C x T window from the record and attach the events it contains.

    T = round(window_duration * sample_rate); the slice starts at sample
    round(window_start * sample_rate).
    """
    n_times = int(round(window_duration * record.sample_rate))
    first = int(round(window_start * record.sample_rate))
    if window_start < -_TOLERANCE or first < 0 or first + n_times > record.n_samples:
        raise OutOfBounds(
            f"window [{window_start}, {window_start + window_duration}] s exceeds record "
            f"{record.id} of {record.duration} s"
        )
    events = clip_events(annotation.events, window_start, window_start + window_duration)
    return Sample(
        data=record.data[:, first:first + n_times],
        events=events,
        window_start=window_start,
    )


def normalize_dataset(dataset: EventDataset) -> EventDataset:
    """Normalize every record of a dataset; annotations and split are unchanged."""
    return dataset._replace(records=[normalize_record(record) for record in dataset.records])
