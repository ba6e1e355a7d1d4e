"""
Record Scanner for line-delimited manifest files.

Reads one JSON object per line and tags every record with a "path:line"
locator so downstream failures point at the offending record. Sidecar blobs
of little-endian float32 values are read through BlobReader.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from ..errors import RecordFormatError

logger = logging.getLogger(__name__)

FLOAT32_LE = np.dtype("<f4")


@dataclass(frozen=True)
class Record:
    locator: str
    data: Dict[str, Any]

    def require(self, key: str) -> Any:
        if key not in self.data:
            raise RecordFormatError(f"Missing required field '{key}'", self.locator)
        return self.data[key]


class ScanOptions:
    """Configuration options for manifest scanning."""

    def __init__(self, comment_prefix: str = "#", skip_blank: bool = True, encoding: str = "utf-8"):
        self.comment_prefix = comment_prefix
        self.skip_blank = skip_blank
        self.encoding = encoding


class RecordScanner:
    """Yields JSON records from a line-delimited file."""

    def __init__(self, options: ScanOptions = None):
        self.options = options or ScanOptions()

    def scan(self, path: str) -> Iterator[Record]:
        """
        Scan a manifest file.

        Args:
            path: Path to the line-delimited file

        Yields:
            Record objects in file order

        Raises:
            FileNotFoundError: If path doesn't exist
            RecordFormatError: If a line is not a JSON object
        """
        path = Path(path)

        if not path.exists():
            raise FileNotFoundError(f"Manifest not found: {path}")

        if not path.is_file():
            raise IsADirectoryError(f"Path is not a file: {path}")

        with open(path, "r", encoding=self.options.encoding) as f:
            for line_no, line in enumerate(f, start=1):
                stripped = line.strip()
                if not stripped and self.options.skip_blank:
                    continue
                if self.options.comment_prefix and stripped.startswith(self.options.comment_prefix):
                    continue

                locator = f"{path}:{line_no}"
                try:
                    data = json.loads(stripped)
                except json.JSONDecodeError as e:
                    raise RecordFormatError(f"Invalid JSON record ({e.msg})", locator)
                if not isinstance(data, dict):
                    raise RecordFormatError("Record must be a JSON object", locator)
                yield Record(locator=locator, data=data)

    def scan_records(self, path: str) -> List[Record]:
        return list(self.scan(path))


class BlobReader:
    """
    Reads float32 vectors from sidecar blob files.

    Blob paths are resolved relative to the manifest directory; each file is
    memory-mapped once.
    """

    def __init__(self, base_dir: Optional[str] = None):
        self.base_dir = Path(base_dir) if base_dir else Path(".")
        self._maps: Dict[Path, np.ndarray] = {}

    def read(self, blob_file: str, offset: int, count: int, locator: Optional[str] = None) -> np.ndarray:
        """
        Read `count` float32 values starting at byte `offset`.

        Raises:
            RecordFormatError: If the range is misaligned or out of bounds
        """
        if offset < 0 or count <= 0:
            raise RecordFormatError(f"Invalid blob range offset={offset} count={count}", locator)
        if offset % FLOAT32_LE.itemsize:
            raise RecordFormatError(f"Blob offset {offset} is not a multiple of 4 bytes", locator)

        data = self._map(blob_file, locator)
        start = offset // FLOAT32_LE.itemsize
        end = start + count
        if end > data.shape[0]:
            raise RecordFormatError(
                f"Blob range [{start}, {end}) exceeds {blob_file} ({data.shape[0]} floats)", locator
            )
        return np.asarray(data[start:end], dtype=np.float32)

    def _map(self, blob_file: str, locator: Optional[str]) -> np.ndarray:
        path = Path(blob_file)
        if not path.is_absolute():
            path = self.base_dir / path
        if path not in self._maps:
            if not path.exists():
                raise RecordFormatError(f"Blob file not found: {path}", locator)
            size = path.stat().st_size
            if size == 0:
                self._maps[path] = np.zeros(0, dtype=FLOAT32_LE)
            else:
                self._maps[path] = np.memmap(path, dtype=FLOAT32_LE, mode="r")
            logger.debug(f"Mapped blob {path} ({size} bytes)")
        return self._maps[path]
