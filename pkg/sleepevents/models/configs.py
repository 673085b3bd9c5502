"""Configuration models.

Field defaults come from :class:`sleepevents.config.Config`; every model
round-trips through JSON unchanged.
"""
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from sleepevents.config import Config
from sleepevents.utils.errors import InvalidConfig


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Model):
    default_duration: float = Field(Config.DEFAULT_DURATION, gt=0)
    overlap: float = Field(Config.DEFAULT_OVERLAP, ge=0.0, lt=1.0)


class MatchConfig(_Model):
    eta: float = Field(Config.MATCH_ETA, ge=0.0, le=1.0)


class LossConfig(_Model):
    neg_pos_ratio: float = Field(Config.NEG_POS_RATIO, gt=0)
    min_negatives: int = Field(Config.MIN_NEGATIVES, ge=1)
    eta: float = Field(Config.MATCH_ETA, ge=0.0, le=1.0)

    @property
    def match(self) -> MatchConfig:
        return MatchConfig(eta=self.eta)


class NetConfig(_Model):
    n_channels: int = Field(ge=1)  # C
    n_times: int = Field(ge=1)  # T
    n_blocks: int = Field(Config.N_BLOCKS, ge=1)  # K
    n_labels: int = Field(ge=1)  # L
    n_defaults: int = Field(ge=1)  # N_d

    @property
    def n_features(self) -> int:
        return 4 * 2 ** self.n_blocks

    @property
    def reduced_times(self) -> int:
        return self.n_times // 2 ** self.n_blocks

    def check(self) -> "NetConfig":
        if self.n_times % 2 ** self.n_blocks != 0:
            raise InvalidConfig(
                f"T={self.n_times} is not divisible by 2^K={2 ** self.n_blocks}"
            )
        return self


class TrainConfig(_Model):
    lr: float = Field(Config.LEARNING_RATE, gt=0)
    momentum: float = Field(Config.MOMENTUM, ge=0.0, lt=1.0)
    batch_size: int = Field(Config.BATCH_SIZE, ge=1)
    max_epochs: int = Field(Config.MAX_EPOCHS, ge=1)
    positive_fraction: float = Field(Config.POSITIVE_FRACTION, ge=0.0, le=1.0)
    early_stop_patience: int = Field(Config.EARLY_STOP_PATIENCE, ge=1)
    plateau_patience: int = Field(Config.PLATEAU_PATIENCE, ge=1)
    lr_decay_factor: float = Field(Config.LR_DECAY_FACTOR, gt=0.0, le=1.0)
    window_duration: float = Field(Config.WINDOW_DURATION, gt=0)
    steps_per_epoch: Optional[int] = Field(None, ge=1)  # None: ceil(#train events / batch_size)
    seed: int = 0


class EvalConfig(_Model):
    deltas: List[float] = Field(default_factory=lambda: list(Config.DELTAS))
    theta_grid: List[float] = Field(default_factory=lambda: list(Config.THETA_GRID))
    nms_iou: float = Field(Config.NMS_IOU, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _ranges(self):
        if not self.deltas or any(not 0.0 < d <= 1.0 for d in self.deltas):
            raise ValueError("deltas must lie in (0, 1]")
        if not self.theta_grid or any(not 0.0 <= t <= 1.0 for t in self.theta_grid):
            raise ValueError("theta grid values must lie in [0, 1]")
        return self


class ConsensusConfig(_Model):
    kappa: float = Field(gt=0.0, le=1.0)
    resolution: Optional[float] = Field(None, gt=0)  # None: one signal sample


class EventKind(_Model):
    """One family of planted events; its label is its position in the mix + 1."""
    name: str
    kind: Literal["spindle", "kcomplex", "arousal"]
    rate_per_minute: float = Field(ge=0.0)
    duration: Tuple[float, float]
    amplitude: Tuple[float, float]

    @model_validator(mode="after")
    def _positive(self):
        low, high = self.duration
        if low <= 0 or high < low:
            raise ValueError(f"invalid duration range {self.duration} for {self.name}")
        if self.amplitude[1] < self.amplitude[0]:
            raise ValueError(f"invalid amplitude range {self.amplitude} for {self.name}")
        return self


SPINDLE = EventKind(name="spindle", kind="spindle", rate_per_minute=3.0,
                    duration=(0.5, 2.0), amplitude=(2.0, 3.0))
KCOMPLEX = EventKind(name="kcomplex", kind="kcomplex", rate_per_minute=2.0,
                     duration=(0.7, 0.9), amplitude=(3.0, 5.0))
AROUSAL = EventKind(name="arousal", kind="arousal", rate_per_minute=0.5,
                    duration=(5.0, 15.0), amplitude=(3.0, 3.0))  # variance factor


class SynthConfig(_Model):
    sample_rate: float = Field(Config.SAMPLE_RATE, gt=0)
    record_seconds: float = Field(Config.SYNTH_RECORD_SECONDS, gt=0)
    channels: int = Field(1, ge=1)
    events: List[EventKind] = Field(default_factory=lambda: [SPINDLE, KCOMPLEX, AROUSAL])
    noise_octaves: int = Field(7, ge=1)
    octave_gain: float = Field(1.0, gt=0)  # amplitude ratio of successive slower octaves
    seed: int = 0

    @property
    def n_labels(self) -> int:
        return len(self.events)


class PathsConfig(_Model):
    data_dir: str = "data"
    out_dir: str = "runs"


class RunConfig(_Model):
    sample_rate: float = Field(Config.SAMPLE_RATE, gt=0)
    n_blocks: int = Field(Config.N_BLOCKS, ge=1)
    grid: GridConfig = Field(default_factory=GridConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
    synth: SynthConfig = Field(default_factory=lambda: SynthConfig(events=[SPINDLE, KCOMPLEX]))
    paths: PathsConfig = Field(default_factory=PathsConfig)
    seed: int = 0
    threads: Optional[int] = Field(default_factory=lambda: Config.THREADS)

    @property
    def window_duration(self) -> float:
        return self.train.window_duration

    @property
    def n_times(self) -> int:
        return int(round(self.window_duration * self.sample_rate))

    def check(self) -> "RunConfig":
        exact = self.window_duration * self.sample_rate
        if abs(exact - round(exact)) > 1e-6:
            raise InvalidConfig(
                f"window of {self.window_duration} s at {self.sample_rate} Hz is not a whole number of samples"
            )
        if self.n_times % 2 ** self.n_blocks != 0:
            raise InvalidConfig(
                f"T={self.n_times} is not divisible by 2^K={2 ** self.n_blocks}"
            )
        if abs(self.synth.sample_rate - self.sample_rate) > 1e-9:
            raise InvalidConfig(
                f"synthetic sample rate {self.synth.sample_rate} differs from {self.sample_rate}"
            )
        return self

    def net_config(self, n_channels: int, n_labels: int, n_defaults: int) -> NetConfig:
        return NetConfig(
            n_channels=n_channels,
            n_times=self.n_times,
            n_blocks=self.n_blocks,
            n_labels=n_labels,
            n_defaults=n_defaults,
        ).check()

    @classmethod
    def preset(cls, name: str) -> "RunConfig":
        if name == "spindle-kcomplex":
            return cls()
        if name == "arousal":
            return cls(
                grid=GridConfig(default_duration=15.0, overlap=0.5),
                train=TrainConfig(window_duration=120.0),
                synth=SynthConfig(events=[AROUSAL]),
            )
        raise InvalidConfig(f"unknown preset {name!r}")


PRESETS = ("spindle-kcomplex", "arousal")
