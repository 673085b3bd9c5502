import logging
from pathlib import Path
from typing import List, Union

from sleepevents.config import Config
from sleepevents.models.models import Annotation, DatasetSplit, Record
from sleepevents.services import record_io
from sleepevents.services.storage.base import BaseDatasetStore
from sleepevents.utils.errors import MissingRecord

logger = logging.getLogger(__name__)


class LocalDatasetStore(BaseDatasetStore):
    """
    Dataset directory layout::

        <root>/records/<record_id>.dsr
        <root>/annotations/<record_id>.jsonl
        <root>/split.json
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.record_dir = self.root / "records"
        self.annotation_dir = self.root / "annotations"
        self.split_path = self.root / Config.SPLIT_FILE

    def _record_path(self, record_id: str) -> Path:
        return self.record_dir / f"{record_id}{Config.RECORD_SUFFIX}"

    def _annotation_path(self, record_id: str) -> Path:
        return self.annotation_dir / f"{record_id}{Config.ANNOTATION_SUFFIX}"

    def save_record(self, record: Record) -> str:
        return str(record_io.write_record(self._record_path(record.id), record))

    def load_record(self, record_id: str) -> Record:
        path = self._record_path(record_id)
        if not path.exists():
            logger.error(f"Record file not found: {path}")
            raise MissingRecord(f"record {record_id!r} not found in {self.record_dir}")
        return record_io.read_record(path, record_id)

    def save_annotation(self, annotation: Annotation) -> str:
        return str(record_io.write_annotation(self._annotation_path(annotation.record_id), annotation))

    def load_annotation(self, record_id: str) -> Annotation:
        path = self._annotation_path(record_id)
        if not path.exists():
            logger.warning(f"No annotation file for {record_id}, assuming no events")
            return Annotation(record_id=record_id)
        return record_io.read_annotation(path, record_id)

    def list_records(self) -> List[str]:
        if not self.record_dir.exists():
            return []
        return sorted(path.stem for path in self.record_dir.glob(f"*{Config.RECORD_SUFFIX}"))

    def save_split(self, split: DatasetSplit) -> str:
        return str(record_io.write_split(self.split_path, split))

    def load_split(self) -> DatasetSplit:
        if not self.split_path.exists():
            raise MissingRecord(f"split file not found: {self.split_path}")
        return record_io.read_split(self.split_path)
