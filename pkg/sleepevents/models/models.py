from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from sleepevents.utils.errors import MissingRecord


class Interval(NamedTuple):
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


def _frozen_array(value) -> np.ndarray:
    array = np.asarray(value)
    if array.flags.writeable:
        array = array.copy()
        array.flags.writeable = False
    return array


class Record(BaseModel):
    """A multichannel, uniformly sampled signal (channels x samples).

    Samples are stored as float32, the precision of the record file format.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: str
    sample_rate: float = Field(gt=0)
    channel_names: List[str]
    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        array = _frozen_array(value)
        if array.ndim != 2:
            raise ValueError(f"record data must be 2-D (channels x samples), got shape {array.shape}")
        if array.dtype != np.float32:
            array = _frozen_array(array.astype(np.float32))
        return array

    @model_validator(mode="after")
    def _check_shape(self):
        if len(self.channel_names) != self.data.shape[0] or self.data.shape[0] < 1:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {self.data.shape[0]} data rows"
            )
        if self.data.shape[1] < 1:
            raise ValueError("record must hold at least one sample")
        if not np.isfinite(self.data).all():
            raise ValueError("record data contains non-finite values")
        return self

    @property
    def n_channels(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.data.shape[1])

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


class Event(BaseModel):
    """A (center, duration, label) triple; times in seconds."""
    model_config = ConfigDict(frozen=True)

    center: float
    duration: float = Field(gt=0)
    label: int = Field(ge=1)

    @classmethod
    def from_bounds(cls, start: float, end: float, label: int) -> "Event":
        return cls(center=0.5 * (start + end), duration=end - start, label=label)

    @classmethod
    def from_start(cls, start: float, duration: float, label: int) -> "Event":
        return cls(center=start + 0.5 * duration, duration=duration, label=label)

    @property
    def start(self) -> float:
        return self.center - 0.5 * self.duration

    @property
    def end(self) -> float:
        return self.center + 0.5 * self.duration

    @property
    def interval(self) -> Interval:
        return Interval(self.start, self.end)


class Annotation(BaseModel):
    model_config = ConfigDict(frozen=True)

    record_id: str
    events: List[Event] = Field(default_factory=list)

    @field_validator("events")
    @classmethod
    def _sorted(cls, events: List[Event]) -> List[Event]:
        return sorted(events, key=lambda e: (e.start, e.label))

    @property
    def labels(self) -> List[int]:
        return sorted({event.label for event in self.events})

    def for_label(self, label: int) -> List[Event]:
        return [event for event in self.events if event.label == label]


class Sample(BaseModel):
    """A training window with events in window coordinates."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    events: List[Event] = Field(default_factory=list)
    window_start: float = 0.0

    @property
    def is_positive(self) -> bool:
        return len(self.events) > 0


class DatasetSplit(BaseModel):
    train: List[str]
    validation: List[str]
    test: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _disjoint(self):
        if not self.train or not self.validation:
            raise ValueError("train and validation splits must be non-empty")
        seen = set()
        for name in ("train", "validation", "test"):
            ids = set(getattr(self, name))
            overlap = seen & ids
            if overlap:
                raise ValueError(f"record ids appear in more than one split: {sorted(overlap)}")
            seen |= ids
        return self


class Detection(BaseModel):
    """A predicted event in record coordinates."""
    model_config = ConfigDict(frozen=True)

    interval: Interval
    label: int = Field(ge=1)
    probability: float = Field(ge=0.0, le=1.0)

    @property
    def start(self) -> float:
        return self.interval.start

    @property
    def end(self) -> float:
        return self.interval.end

    @property
    def duration(self) -> float:
        return self.interval.end - self.interval.start


class DetectionThresholds(BaseModel):
    theta: Dict[int, float]
    delta: Optional[float] = None  # IoU criterion the thresholds were calibrated for

    @field_validator("theta")
    @classmethod
    def _in_unit_range(cls, theta: Dict[int, float]) -> Dict[int, float]:
        for label, value in theta.items():
            if label < 1 or not 0.0 <= value <= 1.0:
                raise ValueError(f"invalid threshold {value} for label {label}")
        return dict(sorted(theta.items()))

    def for_label(self, label: int) -> float:
        return self.theta[label]


class EventDataset(NamedTuple):
    """Records with their annotations and the train / validation / test split."""
    records: List[Record]
    annotations: List[Annotation]
    split: DatasetSplit

    def pairs(self, record_ids: List[str]) -> List[Tuple[Record, Annotation]]:
        index = {record.id: i for i, record in enumerate(self.records)}
        missing = [r for r in record_ids if r not in index]
        if missing:
            raise MissingRecord(f"record(s) {', '.join(missing)} not in dataset")
        return [(self.records[index[r]], self.annotations[index[r]]) for r in record_ids]

    @property
    def train(self) -> List[Tuple[Record, Annotation]]:
        return self.pairs(self.split.train)

    @property
    def validation(self) -> List[Tuple[Record, Annotation]]:
        return self.pairs(self.split.validation)

    @property
    def test(self) -> List[Tuple[Record, Annotation]]:
        return self.pairs(self.split.test)

    @property
    def n_labels(self) -> int:
        return max((e.label for a in self.annotations for e in a.events), default=1)
