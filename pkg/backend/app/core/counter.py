"""
Persisted monotonic counter.

File layout: value (u64 big-endian) || HMAC-SHA-256(counter key, value).
"""
from __future__ import annotations

import logging
import struct
import threading
from pathlib import Path

from . import crypto_core as crypto
from .errors import PersistenceFailure, RollbackDetected
from .persistence import atomic_write, read_bytes

logger = logging.getLogger(__name__)

COUNTER_FILE_SIZE = 8 + 32


def counter_key(seal_key: bytes) -> bytes:
    return crypto.hkdf(seal_key, salt=None, info=b"monotonic-counter-mac")


class MonotonicCounter:
    def __init__(self, path: Path | str, seal_key: bytes, *, fsync: bool = True, create: bool = True):
        self.path = Path(path)
        self._key = counter_key(seal_key)
        self._fsync = fsync
        self._lock = threading.Lock()
        if not self.path.exists():
            if not create:
                raise PersistenceFailure(f"counter file missing: {self.path}")
            self._write(0)
            logger.info("[counter] created %s at 0", self.path)
        self._value = self._read()

    def _encode(self, value: int) -> bytes:
        body = struct.pack(">Q", value)
        return body + crypto.mac(self._key, body)

    def _write(self, value: int) -> None:
        atomic_write(self.path, self._encode(value), fsync=self._fsync)

    def _read(self) -> int:
        raw = read_bytes(self.path)
        if len(raw) != COUNTER_FILE_SIZE:
            raise PersistenceFailure(f"counter file {self.path} has bad size {len(raw)}")
        body, tag = raw[:8], raw[8:]
        if not crypto.mac_verify(self._key, body, tag):
            raise PersistenceFailure(f"counter file {self.path} failed authentication")
        return struct.unpack(">Q", body)[0]

    @property
    def value(self) -> int:
        return self._value

    def reload(self) -> int:
        with self._lock:
            fresh = self._read()
            if fresh < self._value:
                raise RollbackDetected(f"counter went backwards: {fresh} < {self._value}")
            self._value = fresh
            return fresh

    def increment(self) -> int:
        with self._lock:
            nxt = self._value + 1
            self._write(nxt)
            self._value = nxt
            return nxt


def counter_increment(c: MonotonicCounter) -> int:
    return c.increment()
