"""
Tier-1 input channel and behavioral feature extraction.

Batches are constant size (BATCH_CAPACITY slots, padded) and tagged with an
HMAC under the session channel key. Features are computed from 5 ms quantized
inter-keystroke intervals only.

Batch encoding (before the tag):
    b"EVB1" | batch_index u64 | capacity u16 |
    capacity x (slot_len u8 = 18 | seq u64 | timestamp_us u64 | key_class u8 | is_padding u8)
"""
from __future__ import annotations

import logging
import math
import struct
import threading
from collections import deque
from typing import Deque, Iterable, Iterator, List, Sequence

import numpy as np
from scipy.stats import entropy as shannon_entropy

from ..core import crypto_core as crypto
from ..core.errors import BadMac, ReplayDetected
from ..models.evidence import (
    BATCH_CAPACITY,
    BATCH_FRAME_US,
    PADDING_EVENT,
    BehavioralFeatures,
    EventBatch,
    KeystrokeEvent,
)

logger = logging.getLogger(__name__)

BATCH_MAGIC = b"EVB1"
SLOT_LEN = 18
QUANTUM_US = 5_000
IKI_CAP_US = 2_000_000
OVERFLOW_BIN = IKI_CAP_US // QUANTUM_US     # 400
BIN_COUNT = OVERFLOW_BIN + 1
PAUSE_US = 1_000_000


# ---------------- batch encoding ----------------
def _encode_slot(ev: KeystrokeEvent) -> bytes:
    return struct.pack(
        ">BQQBB", SLOT_LEN, ev.sequence_number, ev.timestamp_us, int(ev.key_class), 1 if ev.is_padding else 0
    )


def encode_batch_body(events: Sequence[KeystrokeEvent], batch_index: int) -> bytes:
    if len(events) != BATCH_CAPACITY:
        raise ValueError(f"batch must carry exactly {BATCH_CAPACITY} slots, got {len(events)}")
    parts = [BATCH_MAGIC, struct.pack(">QH", batch_index, BATCH_CAPACITY)]
    parts.extend(_encode_slot(e) for e in events)
    return b"".join(parts)


def encode_batch(batch: EventBatch) -> bytes:
    return encode_batch_body(batch.events, batch.batch_index) + batch.tag


def make_batch(channel_key: bytes, events: Sequence[KeystrokeEvent], batch_index: int) -> EventBatch:
    """Pad `events` to the batch capacity and tag the result."""
    if len(events) > BATCH_CAPACITY:
        raise ValueError(f"at most {BATCH_CAPACITY} events per batch")
    slots = tuple(events) + (PADDING_EVENT,) * (BATCH_CAPACITY - len(events))
    tag = crypto.mac(channel_key, encode_batch_body(slots, batch_index))
    return EventBatch(events=slots, batch_index=batch_index, tag=tag)


class BatchFramer:
    """Groups timestamped events into one batch per 100 ms frame, carrying overflow forward."""

    def __init__(self, channel_key: bytes, frame_us: int = BATCH_FRAME_US, first_batch_index: int = 0):
        self._key = channel_key
        self.frame_us = frame_us
        self.next_batch_index = first_batch_index
        self.next_frame = 0
        self._carry: Deque[KeystrokeEvent] = deque()

    @property
    def carried(self) -> int:
        return len(self._carry)

    def frames(self, events: Iterable[KeystrokeEvent], until_us: int) -> Iterator[EventBatch]:
        """Emit batches for every frame ending at or before `until_us`.

        `events` must be sorted by timestamp and fall before `until_us`.
        """
        incoming = deque(events)
        last_frame = until_us // self.frame_us
        while self.next_frame < last_frame:
            frame_end = (self.next_frame + 1) * self.frame_us
            while incoming and incoming[0].timestamp_us < frame_end:
                self._carry.append(incoming.popleft())
            take = [self._carry.popleft() for _ in range(min(BATCH_CAPACITY, len(self._carry)))]
            yield make_batch(self._key, take, self.next_batch_index)
            self.next_batch_index += 1
            self.next_frame += 1
        # events past the last whole frame wait for the next call
        self._carry.extend(incoming)

    def skip_to(self, time_us: int) -> None:
        """Drop frames (and carried events) before `time_us`; used after a crash."""
        self._carry.clear()
        self.next_frame = max(self.next_frame, time_us // self.frame_us)


# ---------------- channel ----------------
class EventChannel:
    def __init__(self, channel_key: bytes, watermark: int = 0):
        self._key = channel_key
        self.watermark = watermark
        self._pending: List[KeystrokeEvent] = []
        self._lock = threading.Lock()

    def submit(self, batch: EventBatch) -> int:
        body = encode_batch_body(batch.events, batch.batch_index)
        if not crypto.mac_verify(self._key, body, batch.tag):
            logger.warning("[channel] batch %d rejected: bad tag", batch.batch_index)
            raise BadMac(f"batch {batch.batch_index} tag does not verify")

        real = batch.real_events
        with self._lock:
            last = self.watermark
            for ev in real:
                if ev.sequence_number <= last:
                    logger.warning(
                        "[channel] batch %d rejected: seq %d <= %d", batch.batch_index, ev.sequence_number, last
                    )
                    raise ReplayDetected(f"stale sequence number {ev.sequence_number}")
                last = ev.sequence_number
            self.watermark = last
            self._pending.extend(real)
        logger.debug("[channel] batch %d accepted %d events", batch.batch_index, len(real))
        return len(real)

    def drain(self) -> List[KeystrokeEvent]:
        with self._lock:
            out, self._pending = self._pending, []
        return out


def channel_open(session_key: bytes, watermark: int = 0) -> EventChannel:
    return EventChannel(session_key, watermark)


def channel_submit(handle: EventChannel, batch: EventBatch) -> int:
    return handle.submit(batch)


# ---------------- features ----------------
def quantize_iki(raw_interval_us: int) -> int:
    if raw_interval_us < 0:
        raise ValueError("interval must be >= 0")
    if raw_interval_us >= IKI_CAP_US:
        return OVERFLOW_BIN
    return raw_interval_us // QUANTUM_US


def _bursts(ikis_us: np.ndarray) -> List[int]:
    # runs of keystrokes separated by pauses; n IKIs describe n + 1 keystrokes
    lengths, run = [], 1
    for iki in ikis_us:
        if iki > PAUSE_US:
            lengths.append(run)
            run = 1
        else:
            run += 1
    lengths.append(run)
    return lengths


def extract_features(events: Sequence[KeystrokeEvent]) -> BehavioralFeatures:
    real = sorted((e for e in events if not e.is_padding), key=lambda e: e.sequence_number)
    n = len(real)
    if n == 0:
        return BehavioralFeatures()
    if n == 1:
        return BehavioralFeatures(keystroke_count=1, mean_burst_length=1.0, max_burst_length=1)

    ts = np.array([e.timestamp_us for e in real], dtype=np.int64)
    ikis = np.maximum(np.diff(ts), 0)
    bins = np.array([quantize_iki(int(v)) for v in ikis], dtype=np.int64)
    counts = np.bincount(bins, minlength=BIN_COUNT)
    nz = np.nonzero(counts)[0]

    bits = float(shannon_entropy(counts[nz], base=2)) if len(nz) > 1 else 0.0
    bursts = _bursts(ikis)
    return BehavioralFeatures(
        keystroke_count=n,
        iki_histogram={int(b): int(counts[b]) for b in nz},
        shannon_entropy_bits=max(0.0, bits),
        # evidence keeps quantized timing only
        mean_iki_ms=float(np.mean(bins * (QUANTUM_US // 1000))),
        pause_rate=float(np.mean(ikis > PAUSE_US)),
        mean_burst_length=float(np.mean(bursts)),
        max_burst_length=int(max(bursts)),
    )


def entropy_budget(keystroke_count: int, bits_per_iki: float) -> int:
    if keystroke_count < 0 or bits_per_iki < 0:
        raise ValueError("inputs must be >= 0")
    return math.floor(round(keystroke_count * bits_per_iki, 9))
