import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: Optional[int]) -> Optional[int]:
    value = os.getenv(name)
    if value is None or value == "":
        return default
    return int(value)


class Config:
    APP_NAME = "sleepevents"
    VERSION = "0.1.0"

    # File formats
    RECORD_MAGIC = b"DSR1"
    CHECKPOINT_MAGIC = b"DSM1"
    RECORD_SUFFIX = ".dsr"
    ANNOTATION_SUFFIX = ".jsonl"
    SPLIT_FILE = "split.json"

    # Signals
    SAMPLE_RATE = 128.0  # Hz
    WINDOW_DURATION = 20.0  # seconds

    # Default events
    DEFAULT_DURATION = 1.0  # seconds
    DEFAULT_OVERLAP = 0.75

    # Network
    N_BLOCKS = 8
    BN_EPS = 1e-5
    BN_MOMENTUM = 0.1  # running-stat update factor
    SPATIAL_INIT_NOISE = 0.01

    # Matching and loss
    MATCH_ETA = 0.5
    NEG_POS_RATIO = 1.0 / 3.0
    MIN_NEGATIVES = 10
    PROB_CLAMP = 1e-12

    # Training
    LEARNING_RATE = 1e-3
    MOMENTUM = 0.9
    BATCH_SIZE = 32
    MAX_EPOCHS = 200
    POSITIVE_FRACTION = 0.5
    EARLY_STOP_PATIENCE = 10
    PLATEAU_PATIENCE = 5
    LR_DECAY_FACTOR = 0.5
    MAX_REJECTIONS = 10_000

    # Inference and evaluation
    NMS_IOU = 0.4
    DELTAS = [round(0.1 * i, 1) for i in range(1, 10)]
    THETA_GRID = [round(0.05 * i, 2) for i in range(1, 20)]

    # Synthetic data
    SYNTH_RECORD_SECONDS = 600.0
    SYNTH_MAX_ATTEMPTS = 10_000

    # Runtime
    THREADS: Optional[int] = _env_int("SLEEPEVENTS_THREADS", os.cpu_count() or 1)
    LOG_LEVEL = os.getenv("SLEEPEVENTS_LOG_LEVEL", "INFO")
    LOG_DIR: Optional[str] = os.getenv("SLEEPEVENTS_LOG_DIR")  # defaults to <project root>/logs
