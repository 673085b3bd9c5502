"""One-shot detection of sleep micro-events in EEG recordings."""
from sleepevents.config import Config

__version__ = Config.VERSION
