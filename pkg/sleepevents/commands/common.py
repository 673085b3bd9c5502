"""Helpers shared by the subcommands."""
import logging
from pathlib import Path
from typing import List, Sequence

from sleepevents.models.models import Record
from sleepevents.services.network import DetectorModel
from sleepevents.services.record_io import read_record
from sleepevents.services.signals import normalize_record
from sleepevents.utils.errors import InvalidConfig

logger = logging.getLogger(__name__)


def load_records(paths: Sequence[str]) -> List[Record]:
    """Read and normalize record files; ids come from the file names."""
    return [normalize_record(read_record(path)) for path in paths]


def check_model_rate(model: DetectorModel, window_duration: float, records: Sequence[Record]) -> None:
    """Every record must yield the model's T samples per window."""
    for record in records:
        n_times = int(round(window_duration * record.sample_rate))
        if n_times != model.cfg.n_times:
            raise InvalidConfig(
                f"record {record.id} at {record.sample_rate} Hz gives {n_times} samples per "
                f"{window_duration} s window, the model expects {model.cfg.n_times}"
            )


def output_path(path: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path
