"""Append-only record journal.

Each record is ``uint32 length || uint32 crc32 || json bytes`` (big-endian).
A record whose bytes end early, or whose checksum fails while it is the
last record in the file, is a torn write: it is dropped with a warning
and the file is truncated back to the last good record.  A checksum
failure anywhere else means the journal is corrupt and replay refuses.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import zlib
from pathlib import Path
from typing import Any

from ..errors import EdiError

logger = logging.getLogger(__name__)

_HEADER = struct.Struct(">II")


class CorruptJournal(EdiError):
    code = "CORRUPT_JOURNAL"


def encode_record(record: dict[str, Any]) -> bytes:
    body = json.dumps(record, sort_keys=True, separators=(",", ":")).encode()
    return _HEADER.pack(len(body), zlib.crc32(body)) + body


def decode_records(data: bytes) -> tuple[list[dict[str, Any]], int]:
    """Decode a journal image; returns (records, length of the valid prefix)."""
    records = []
    pos = 0
    while pos < len(data):
        if pos + _HEADER.size > len(data):
            logger.warning("journal: discarding torn header at offset %d", pos)
            break
        length, crc = _HEADER.unpack_from(data, pos)
        end = pos + _HEADER.size + length
        if end > len(data):
            logger.warning("journal: discarding torn record at offset %d", pos)
            break
        body = data[pos + _HEADER.size:end]
        if zlib.crc32(body) != crc:
            if end == len(data):
                logger.warning("journal: discarding final record with bad checksum at offset %d", pos)
                break
            raise CorruptJournal(f"checksum failure in record at offset {pos}")
        try:
            records.append(json.loads(body))
        except ValueError:
            raise CorruptJournal(f"undecodable record at offset {pos}") from None
        pos = end
    return records, pos


class Journal:
    def __init__(self, path: str | Path, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        data = self.path.read_bytes() if self.path.exists() else b""
        self.recovered, good = decode_records(data)
        if good != len(data):
            with open(self.path, "r+b") as fh:
                fh.truncate(good)
                os.fsync(fh.fileno())
        self._fh = open(self.path, "ab")

    def append(self, record: dict[str, Any]) -> None:
        self._fh.write(encode_record(record))
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()


def replay_journal(path: str | Path) -> list[dict[str, Any]]:
    """Read-only replay of a journal file (no truncation)."""
    path = Path(path)
    if not path.exists():
        return []
    return decode_records(path.read_bytes())[0]
