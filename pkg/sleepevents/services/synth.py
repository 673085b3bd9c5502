"""Synthetic EEG-like records with planted, labelled micro-events."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from sleepevents.config import Config
from sleepevents.models.configs import EventKind, SynthConfig
from sleepevents.models.models import Annotation, DatasetSplit, Event, EventDataset, Record
from sleepevents.services.storage.base import BaseDatasetStore
from sleepevents.utils.errors import PlacementFailure

logger = logging.getLogger(__name__)

SPINDLE_BAND = (11.0, 16.0)  # Hz


def pink_noise(n_samples: int, rng: np.random.Generator, octaves: int = 7, gain: float = 1.0) -> np.ndarray:
    """
    Sum of white noise held at successively halved rates and linearly
    interpolated, standardized to zero mean and unit variance. Octave o is
    scaled by gain**o.
    """
    t = np.arange(n_samples, dtype=np.float64)
    out = np.zeros(n_samples)
    for octave in range(octaves):
        hop = 2 ** octave
        knots = np.arange(0, n_samples + hop, hop, dtype=np.float64)
        out += gain ** octave * np.interp(t, knots, rng.standard_normal(knots.size))
    out -= out.mean()
    return out / out.std()


# ---------- Waveforms ----------
def _spindle(n: int, fs: float, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    frequency = rng.uniform(*SPINDLE_BAND)
    phase = rng.uniform(0.0, 2 * np.pi)
    t = np.arange(n) / fs
    return amplitude * np.hanning(n) * np.sin(2 * np.pi * frequency * t + phase)


def _kcomplex(n: int, fs: float, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    # one negative then one positive half-wave over the event
    t = np.arange(n) / n
    return -amplitude * np.sin(2 * np.pi * t)


ADDITIVE: Dict[str, Callable[[int, float, float, np.random.Generator], np.ndarray]] = {
    "spindle": _spindle,
    "kcomplex": _kcomplex,
}


def _plan_events(cfg: SynthConfig, n_samples: int, rng: np.random.Generator) -> List[Tuple[int, int, int, float]]:
    """(label, first sample, length, amplitude) of each event, non-overlapping, sorted by start."""
    minutes = cfg.record_seconds / 60.0
    wanted = []
    for label, kind in enumerate(cfg.events, start=1):
        count = rng.poisson(kind.rate_per_minute * minutes)
        for _ in range(count):
            length = max(1, int(round(rng.uniform(*kind.duration) * cfg.sample_rate)))
            wanted.append((label, length, float(rng.uniform(*kind.amplitude))))
    # longest first, stable on ties
    wanted.sort(key=lambda item: -item[1])

    taken = np.zeros(n_samples, dtype=bool)
    placed = []
    for label, length, amplitude in wanted:
        if length > n_samples:
            raise PlacementFailure(f"a {length}-sample event does not fit a {n_samples}-sample record")
        for _ in range(Config.SYNTH_MAX_ATTEMPTS):
            first = int(rng.integers(0, n_samples - length + 1))
            if not taken[first:first + length].any():
                taken[first:first + length] = True
                placed.append((label, first, length, amplitude))
                break
        else:
            logger.error(f"Could not place event of label {label} after {Config.SYNTH_MAX_ATTEMPTS} attempts")
            raise PlacementFailure(
                f"no free slot of {length / cfg.sample_rate:.2f} s after {Config.SYNTH_MAX_ATTEMPTS} attempts"
            )
    return sorted(placed, key=lambda item: item[1])


def generate_record(cfg: SynthConfig, rng: np.random.Generator, record_id: str = "synth-000") -> Tuple[Record, Annotation]:
    """Background noise per channel plus planted events; the annotation holds their exact extent."""
    fs = cfg.sample_rate
    n_samples = int(round(cfg.record_seconds * fs))
    data = np.stack([pink_noise(n_samples, rng, cfg.noise_octaves, cfg.octave_gain) for _ in range(cfg.channels)])
    gains = np.ones(cfg.channels) if cfg.channels == 1 else rng.uniform(0.5, 1.0, size=cfg.channels)

    events = []
    for label, first, length, amplitude in _plan_events(cfg, n_samples, rng):
        kind: EventKind = cfg.events[label - 1]
        segment = slice(first, first + length)
        if kind.kind == "arousal":
            data[:, segment] *= np.sqrt(amplitude)
        else:
            waveform = ADDITIVE[kind.kind](length, fs, amplitude, rng)
            data[:, segment] += gains[:, None] * waveform[None, :]
        events.append(Event.from_start(first / fs, length / fs, label))

    record = Record(
        id=record_id,
        sample_rate=fs,
        channel_names=[f"eeg{c + 1}" for c in range(cfg.channels)],
        data=data.astype(np.float32),
    )
    logger.debug(f"Generated {record_id}: {len(events)} events over {cfg.record_seconds} s")
    return record, Annotation(record_id=record_id, events=events)


def split_ids(record_ids: List[str], fractions: Tuple[float, float] = (0.6, 0.2)) -> DatasetSplit:
    """Consecutive train / validation / test blocks; validation and test hold at least one record each."""
    n = len(record_ids)
    n_train = max(1, min(n - 2, int(round(fractions[0] * n))))
    n_val = max(1, min(n - n_train - 1, int(round(fractions[1] * n))))
    return DatasetSplit(
        train=record_ids[:n_train],
        validation=record_ids[n_train:n_train + n_val],
        test=record_ids[n_train + n_val:],
    )


def generate_dataset(
    cfg: SynthConfig,
    n_records: int,
    seed: Optional[int] = None,
    store: Optional[BaseDatasetStore] = None,
    threads: Optional[int] = None,
) -> EventDataset:
    """
    ``n_records`` records seeded from one master seed, split 60/20/20.

    When ``store`` is given, records, annotations and the split are written to it.
    """
    if n_records < 3:
        raise ValueError(f"need at least 3 records for a train/validation/test split, got {n_records}")
    seed = cfg.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(n_records)
    record_ids = [f"synth-{i:03d}" for i in range(n_records)]

    with ThreadPoolExecutor(max_workers=threads or Config.THREADS) as pool:
        futures = [
            pool.submit(generate_record, cfg, np.random.default_rng(child), record_id)
            for child, record_id in zip(children, record_ids)
        ]
        pairs = [future.result() for future in tqdm(futures, desc="synthesize", leave=False, disable=None)]

    dataset = EventDataset(
        records=[record for record, _ in pairs],
        annotations=[annotation for _, annotation in pairs],
        split=split_ids(record_ids),
    )
    if store is not None:
        for record, annotation in pairs:
            store.save_record(record)
            store.save_annotation(annotation)
        store.save_split(dataset.split)
    n_events = sum(len(a.events) for a in dataset.annotations)
    logger.info(f"Generated {n_records} synthetic records with {n_events} events (seed {seed})")
    return dataset
