"""File codecs for records, annotations, splits, detections and thresholds.

Record file (all little-endian)::

    +-------+-----------+-------------+-----------+----------------------+------------------+
    | magic | channels  | sample rate | samples S | C x (u32 len, utf-8) | C x S float32    |
    | DSR1  | u32       | f64         | u64       | channel names        | channel-major    |
    +-------+-----------+-------------+-----------+----------------------+------------------+

Annotation file: one JSON object per line,
``{"record_id": str, "start": s, "duration": s, "label": int >= 1}``.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
from pydantic import ValidationError

from sleepevents.config import Config
from sleepevents.models.models import (
    Annotation,
    DatasetSplit,
    Detection,
    DetectionThresholds,
    Event,
    Interval,
    Record,
)
from sleepevents.utils.errors import MalformedAnnotation, MalformedHeader, TruncatedPayload, UnknownVersion

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_HEADER = struct.Struct("<IdQ")
_LENGTH = struct.Struct("<I")
_FLOAT = np.dtype("<f4")


def check_magic(blob: bytes, magic: bytes, path: PathLike) -> None:
    """Validate a 4-byte magic: same 3-byte family with another version is UnknownVersion."""
    head = blob[:len(magic)]
    if head == magic:
        return
    if len(head) == len(magic) and head[:-1] == magic[:-1]:
        raise UnknownVersion(f"{path}: unsupported format version {head!r}")
    raise MalformedHeader(f"{path}: bad magic {head!r}, expected {magic!r}")


def _take(blob: bytes, offset: int, size: int, path: PathLike) -> bytes:
    if offset + size > len(blob):
        raise TruncatedPayload(f"{path}: expected {size} bytes at offset {offset}, file has {len(blob)}")
    return blob[offset:offset + size]


# ---------- Records ----------
def encode_record(record: Record) -> bytes:
    parts = [Config.RECORD_MAGIC, _HEADER.pack(record.n_channels, record.sample_rate, record.n_samples)]
    for name in record.channel_names:
        encoded = name.encode("utf-8")
        parts.append(_LENGTH.pack(len(encoded)))
        parts.append(encoded)
    parts.append(np.ascontiguousarray(record.data, dtype=_FLOAT).tobytes())
    return b"".join(parts)


def decode_record(blob: bytes, record_id: str, path: PathLike = "<bytes>") -> Record:
    check_magic(blob, Config.RECORD_MAGIC, path)
    offset = len(Config.RECORD_MAGIC)
    n_channels, sample_rate, n_samples = _HEADER.unpack(_take(blob, offset, _HEADER.size, path))
    offset += _HEADER.size
    if n_channels < 1 or n_samples < 1 or not sample_rate > 0:
        raise MalformedHeader(
            f"{path}: invalid header (C={n_channels}, fs={sample_rate}, S={n_samples})"
        )
    names = []
    for _ in range(n_channels):
        (length,) = _LENGTH.unpack(_take(blob, offset, _LENGTH.size, path))
        offset += _LENGTH.size
        try:
            names.append(_take(blob, offset, length, path).decode("utf-8"))
        except UnicodeDecodeError as e:
            raise MalformedHeader(f"{path}: channel name is not UTF-8: {e}") from e
        offset += length
    payload = _take(blob, offset, n_channels * n_samples * _FLOAT.itemsize, path)
    if offset + len(payload) != len(blob):
        logger.warning(f"{path}: {len(blob) - offset - len(payload)} trailing bytes ignored")
    data = np.frombuffer(payload, dtype=_FLOAT).reshape(n_channels, n_samples).astype(np.float32)
    try:
        return Record(id=record_id, sample_rate=sample_rate, channel_names=names, data=data)
    except ValidationError as e:
        raise MalformedHeader(f"{path}: {e}") from e


def write_record(path: PathLike, record: Record) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_record(record))
    logger.debug(f"Wrote record {record.id} to {path}")
    return path


def read_record(path: PathLike, record_id: Optional[str] = None) -> Record:
    path = Path(path)
    record = decode_record(path.read_bytes(), record_id or path.stem, path)
    logger.debug(f"Read record {record.id}: C={record.n_channels}, S={record.n_samples}, fs={record.sample_rate}")
    return record


# ---------- JSON lines ----------
def read_jsonl(path: PathLike) -> List[dict]:
    """Read a jsonl file into a list of dictionaries (blank lines skipped)."""
    rows = []
    with open(path, encoding="utf-8") as fp:
        for number, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise MalformedAnnotation(f"{path}:{number}: invalid JSON: {e}") from e
    return rows


def write_jsonl(path: PathLike, rows: Iterable[dict]) -> Path:
    """Write dictionaries to a jsonl file, replacing it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fp:
        for row in rows:
            fp.write(json.dumps(row) + "\n")
    return path


# ---------- Annotations ----------
def _event_from_row(row: dict, path: PathLike) -> Event:
    try:
        label = row["label"]
        if isinstance(label, bool) or not isinstance(label, int) or label < 1:
            raise MalformedAnnotation(f"{path}: label must be an integer >= 1, got {label!r}")
        return Event.from_start(float(row["start"]), float(row["duration"]), label)
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        if isinstance(e, MalformedAnnotation):
            raise
        raise MalformedAnnotation(f"{path}: invalid annotation row {row!r}: {e}") from e


def read_annotations(path: PathLike) -> Dict[str, Annotation]:
    """Read a (possibly multi-record) annotation file, grouped by record id."""
    grouped: Dict[str, List[Event]] = {}
    for row in read_jsonl(path):
        if not isinstance(row, dict) or not isinstance(row.get("record_id"), str):
            raise MalformedAnnotation(f"{path}: row without a string record_id: {row!r}")
        grouped.setdefault(row["record_id"], []).append(_event_from_row(row, path))
    return {record_id: Annotation(record_id=record_id, events=events) for record_id, events in grouped.items()}


def read_annotation(path: PathLike, record_id: Optional[str] = None) -> Annotation:
    """Read a single-record annotation file; an empty file yields an empty annotation."""
    path = Path(path)
    grouped = read_annotations(path)
    if record_id is not None:
        return grouped.get(record_id, Annotation(record_id=record_id))
    if not grouped:
        return Annotation(record_id=path.stem)
    if len(grouped) > 1:
        raise MalformedAnnotation(f"{path}: holds {len(grouped)} record ids, expected one")
    return next(iter(grouped.values()))


def annotation_rows(annotation: Annotation) -> List[dict]:
    return [
        {"record_id": annotation.record_id, "start": event.start, "duration": event.duration, "label": event.label}
        for event in annotation.events
    ]


def write_annotation(path: PathLike, annotation: Annotation) -> Path:
    return write_jsonl(path, annotation_rows(annotation))


def write_annotations(path: PathLike, annotations: Iterable[Annotation]) -> Path:
    return write_jsonl(path, (row for annotation in annotations for row in annotation_rows(annotation)))


# ---------- Splits ----------
def write_split(path: PathLike, split: DatasetSplit) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(split.model_dump_json(indent=2), encoding="utf-8")
    return path


def read_split(path: PathLike) -> DatasetSplit:
    try:
        return DatasetSplit.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise MalformedHeader(f"{path}: invalid split file: {e}") from e


# ---------- Detections ----------
def write_detections(path: PathLike, detections: Dict[str, List[Detection]]) -> Path:
    rows = (
        {
            "record_id": record_id,
            "start": detection.start,
            "duration": detection.duration,
            "label": detection.label,
            "prob": detection.probability,
        }
        for record_id in sorted(detections)
        for detection in detections[record_id]
    )
    return write_jsonl(path, rows)


def read_detections(path: PathLike) -> Dict[str, List[Detection]]:
    grouped: Dict[str, List[Detection]] = {}
    for row in read_jsonl(path):
        try:
            start = float(row["start"])
            detection = Detection(
                interval=Interval(start, start + float(row["duration"])),
                label=int(row["label"]),
                probability=float(row["prob"]),
            )
            grouped.setdefault(str(row["record_id"]), []).append(detection)
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            raise MalformedAnnotation(f"{path}: invalid detection row {row!r}: {e}") from e
    return grouped


# ---------- Thresholds ----------
def write_thresholds(path: PathLike, thresholds: DetectionThresholds) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(thresholds.model_dump_json(indent=2), encoding="utf-8")
    return path


def read_thresholds(path: PathLike) -> DetectionThresholds:
    try:
        return DetectionThresholds.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise MalformedHeader(f"{path}: invalid thresholds file: {e}") from e
