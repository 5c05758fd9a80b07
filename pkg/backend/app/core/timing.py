from __future__ import annotations

import logging
import time
from typing import Optional

log = logging.getLogger(__name__)


class Timer:
    """Wall-clock timer; `elapsed` holds seconds once the block exits."""

    def __init__(self, what: str, quiet: bool = False):
        self.what = what
        self.quiet = quiet
        self.t0: Optional[float] = None
        self.elapsed: float = 0.0

    def __enter__(self) -> "Timer":
        self.t0 = time.perf_counter()
        if not self.quiet:
            log.debug("[timer] %s ...", self.what)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.elapsed = time.perf_counter() - self.t0
        if exc:
            log.error("[timer] %s failed after %.3fs: %s", self.what, self.elapsed, exc)
        elif not self.quiet:
            log.info("[timer] %s done in %.3fs", self.what, self.elapsed)
