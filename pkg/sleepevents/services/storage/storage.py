from pathlib import Path
from typing import Union

from sleepevents.services.storage.base import BaseDatasetStore
from sleepevents.services.storage.local_storage import LocalDatasetStore


def get_storage(root: Union[str, Path]) -> BaseDatasetStore:
    if not str(root):
        raise RuntimeError("dataset directory not configured")
    return LocalDatasetStore(root)
