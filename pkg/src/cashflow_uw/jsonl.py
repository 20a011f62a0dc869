"""Append-only JSON-lines logs with atomic per-record appends."""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Iterator

logger = logging.getLogger(__name__)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


class JsonlLog:
    """A JSON-lines file that is only ever appended to.

    Each record is written with a single ``write(2)`` on an ``O_APPEND``
    descriptor followed by ``fsync``. A process killed mid-write can leave at
    most one trailing fragment without a newline; readers ignore it and the
    next writer truncates it before appending.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._repair_tail()

    def _repair_tail(self) -> None:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        if data and not data.endswith(b"\n"):
            keep = data.rfind(b"\n") + 1
            logger.warning("truncating torn record at end of %s (%d bytes)", self.path, len(data) - keep)
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)

    def append(self, record) -> None:
        line = (canonical_json(record) + "\n").encode("utf-8")
        with self._lock:
            fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                written = os.write(fd, line)
                if written != len(line):
                    raise OSError(f"short write to {self.path}")
                os.fsync(fd)
            finally:
                os.close(fd)

    def __iter__(self) -> Iterator[dict]:
        return iter(read_jsonl(self.path))


def read_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    data = path.read_bytes()
    complete = data[: data.rfind(b"\n") + 1]
    return [json.loads(line) for line in complete.decode("utf-8").splitlines() if line.strip()]
