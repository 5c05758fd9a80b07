"""
File writes with retry. Transient OSErrors are retried; exhaustion becomes
PersistenceFailure.
"""
from __future__ import annotations

import logging
import os
from pathlib import Path

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_fixed

from .errors import PersistenceFailure

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3


def _log_retry(retry_state) -> None:
    logger.warning(
        "[persist] attempt %d failed: %s", retry_state.attempt_number, retry_state.outcome.exception()
    )


_with_retry = retry(
    retry=retry_if_exception_type(OSError),
    stop=stop_after_attempt(MAX_ATTEMPTS),
    wait=wait_fixed(0.05),
    before_sleep=_log_retry,
    reraise=True,
)


@_with_retry
def _replace(path: Path, data: bytes, fsync: bool) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        if fsync:
            os.fsync(f.fileno())
    os.replace(tmp, path)


@_with_retry
def _append(path: Path, data: bytes, fsync: bool) -> None:
    start = path.stat().st_size if path.exists() else 0
    try:
        with open(path, "ab") as f:
            f.write(data)
            f.flush()
            if fsync:
                os.fsync(f.fileno())
    except OSError:
        # drop any partial tail so the retry appends onto the original length
        if path.exists():
            os.truncate(path, start)
        raise


def atomic_write(path: Path | str, data: bytes, fsync: bool = True) -> None:
    try:
        _replace(Path(path), data, fsync)
    except OSError as e:
        raise PersistenceFailure(f"write {path} failed: {e}") from e


def append_bytes(path: Path | str, data: bytes, fsync: bool = True) -> None:
    try:
        _append(Path(path), data, fsync)
    except OSError as e:
        raise PersistenceFailure(f"append {path} failed: {e}") from e


def read_bytes(path: Path | str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise PersistenceFailure(f"read {path} failed: {e}") from e
