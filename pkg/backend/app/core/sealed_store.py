"""
Sealed store: a directory holding the monotonic counter, the latest sealed
session state, a few retained predecessors, and the offline spool.
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import List, Tuple

from . import crypto_core as crypto
from .counter import MonotonicCounter
from .errors import AuthenticationFailure, KeyMismatch, ParseError, PersistenceFailure, RollbackDetected, SealCorrupted
from .persistence import append_bytes, atomic_write, read_bytes

logger = logging.getLogger(__name__)

COUNTER_NAME = "counter.bin"
LATEST_NAME = "latest.sealed"
SPOOL_NAME = "offline.spool"
STATE_AD = b"state"


def state_associated_data(counter_value: int) -> bytes:
    return STATE_AD + struct.pack(">Q", counter_value)


class SealedStore:
    def __init__(self, directory: Path | str, seal_key: bytes, *, retain: int = 3, fsync: bool = True):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._key = seal_key
        self.key_id = crypto.seal_key_id(seal_key)
        self.retain = retain
        self.fsync = fsync
        # a sealed blob without its counter is a hard error
        self.counter = MonotonicCounter(
            self.directory / COUNTER_NAME, seal_key, fsync=fsync, create=not self.has_sealed_state()
        )

    # ---------------- paths ----------------
    @property
    def latest_path(self) -> Path:
        return self.directory / LATEST_NAME

    @property
    def spool_path(self) -> Path:
        return self.directory / SPOOL_NAME

    def retained_path(self, n: int) -> Path:
        return self.directory / f"sealed.{n}"

    def has_sealed_state(self) -> bool:
        return self.latest_path.exists()

    # ---------------- sealing ----------------
    def _rotate(self) -> None:
        if self.retain <= 0 or not self.latest_path.exists():
            return
        for n in range(self.retain, 1, -1):
            older = self.retained_path(n - 1)
            if older.exists():
                older.replace(self.retained_path(n))
        self.latest_path.replace(self.retained_path(1))

    def write_sealed(self, plaintext: bytes, counter_value: int) -> None:
        """Seal `plaintext` under AD = "state" || counter_value and make it the latest blob."""
        blob = crypto.seal(self._key, plaintext, state_associated_data(counter_value), counter_value)
        self._rotate()
        atomic_write(self.latest_path, crypto.blob_to_bytes(blob), fsync=self.fsync)
        logger.debug("[seal] sealed state at counter %d (%d bytes)", counter_value, len(plaintext))

    def read_sealed(self) -> bytes:
        if not self.latest_path.exists():
            raise PersistenceFailure(f"no sealed state in {self.directory}")
        raw = read_bytes(self.latest_path)
        try:
            blob = crypto.blob_from_bytes(raw)
        except (AuthenticationFailure, ValueError) as e:
            raise SealCorrupted(f"sealed blob unreadable: {e}") from e

        try:
            plaintext = crypto.unseal(self._key, blob, state_associated_data(blob.counter_value))
        except (AuthenticationFailure, KeyMismatch) as e:
            logger.warning("[seal] unseal failed: %s", e)
            raise SealCorrupted(str(e)) from e

        # only an authentic blob can be stale
        live = self.counter.reload()
        if blob.counter_value != live:
            logger.warning("[seal] blob counter %d != live counter %d", blob.counter_value, live)
            raise RollbackDetected(f"sealed state counter {blob.counter_value}, live counter {live}")
        return plaintext

    def retained_blobs(self) -> List[bytes]:
        out = []
        for n in range(1, self.retain + 1):
            p = self.retained_path(n)
            if p.exists():
                out.append(read_bytes(p))
        return out

    def restore_blob(self, raw: bytes) -> None:
        """Overwrite the latest blob with `raw` (rollback injection)."""
        atomic_write(self.latest_path, raw, fsync=self.fsync)

    # ---------------- offline spool ----------------
    def spool_append(self, index: int, bundle: bytes) -> None:
        append_bytes(self.spool_path, struct.pack(">QI", index, len(bundle)) + bundle, fsync=self.fsync)

    def spool_entries(self) -> List[Tuple[int, bytes]]:
        if not self.spool_path.exists():
            return []
        data = read_bytes(self.spool_path)
        entries, pos = [], 0
        while pos < len(data):
            if pos + 12 > len(data):
                raise ParseError("truncated spool entry header")
            index, size = struct.unpack(">QI", data[pos:pos + 12])
            pos += 12
            if pos + size > len(data):
                raise ParseError("truncated spool entry")
            entries.append((index, data[pos:pos + size]))
            pos += size
        return entries

    def spool_clear(self) -> None:
        self.spool_path.unlink(missing_ok=True)

    def wipe(self) -> None:
        """Drop sealed blobs and the spool. The counter survives."""
        self.latest_path.unlink(missing_ok=True)
        for n in range(1, self.retain + 1):
            self.retained_path(n).unlink(missing_ok=True)
        self.spool_clear()
        logger.info("[seal] wiped sealed state in %s", self.directory)
