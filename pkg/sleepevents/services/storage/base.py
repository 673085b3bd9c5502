import logging
from typing import Dict, List, Tuple

from sleepevents.models.models import Annotation, DatasetSplit, EventDataset, Record

logger = logging.getLogger(__name__)


# ---------- Interface ----------
class BaseDatasetStore:
    def save_record(self, record: Record) -> str:
        raise NotImplementedError

    def load_record(self, record_id: str) -> Record:
        raise NotImplementedError

    def save_annotation(self, annotation: Annotation) -> str:
        raise NotImplementedError

    def load_annotation(self, record_id: str) -> Annotation:
        raise NotImplementedError

    def list_records(self) -> List[str]:
        raise NotImplementedError

    def save_split(self, split: DatasetSplit) -> str:
        raise NotImplementedError

    def load_split(self) -> DatasetSplit:
        raise NotImplementedError

    def load_pair(self, record_id: str) -> Tuple[Record, Annotation]:
        return self.load_record(record_id), self.load_annotation(record_id)

    def load_many(self, record_ids: List[str]) -> Dict[str, Tuple[Record, Annotation]]:
        logger.debug(f"Loading {len(record_ids)} records")
        return {record_id: self.load_pair(record_id) for record_id in record_ids}

    def load_dataset(self) -> EventDataset:
        """Every record named by the stored split, with its annotation."""
        split = self.load_split()
        pairs = self.load_many(split.train + split.validation + split.test)
        logger.info(f"Loaded dataset: {len(split.train)}/{len(split.validation)}/{len(split.test)} records")
        return EventDataset(
            records=[record for record, _ in pairs.values()],
            annotations=[annotation for _, annotation in pairs.values()],
            split=split,
        )
