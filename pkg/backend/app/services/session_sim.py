"""
End-to-end session simulator.

Drives the real session engine with synthetic typing on a simulated clock and
injects crashes, partitions and sealed-state corruption from a fault profile.
The fault log it returns is the ground truth that verification results are
checked against.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from pathlib import Path
from typing import List, Optional, Set

import numpy as np

from ..core import event_bus
from ..core.crypto_core import PlatformRoot
from ..core.errors import ConfigInvalid, SealCorrupted
from ..core.sealed_store import SealedStore
from ..core.timing import Timer
from ..models.evidence import KeyClass, KeystrokeEvent, SessionConfig
from ..models.simulation import (
    FaultEvent,
    FaultKind,
    FaultMode,
    FaultOutcome,
    FaultProfile,
    FaultRecord,
    LatencyStats,
    RecoveryBench,
    SessionRun,
    TypingModel,
)
from . import codec
from .behavior import BatchFramer, channel_submit
from .evidence_chain import (
    Session,
    checkpoint_tick,
    cold_restart,
    crash,
    go_offline,
    go_online,
    open_store,
    recover,
    session_init,
)

logger = logging.getLogger(__name__)

US = 1_000_000
_CRASHES = (FaultKind.CRASH, FaultKind.SEAL_CORRUPT)


# ---------------- typing ----------------
class Keystrokes:
    """Pre-generated keystroke stream: timestamps (µs), key classes and the printable bytes typed."""

    def __init__(self, timestamps: np.ndarray, classes: np.ndarray, letters: bytes):
        self.timestamps = timestamps
        self.classes = classes
        self.letters = letters

    def __len__(self) -> int:
        return len(self.timestamps)

    def index_before(self, time_us: int) -> int:
        """Number of keystrokes strictly before `time_us`."""
        return int(np.searchsorted(self.timestamps, time_us, side="left"))

    def events(self, start: int, stop: int) -> List[KeystrokeEvent]:
        return [
            KeystrokeEvent(
                sequence_number=i + 1,
                timestamp_us=int(self.timestamps[i]),
                key_class=KeyClass(int(self.classes[i])),
            )
            for i in range(start, stop)
        ]


def generate_keystrokes(typing: TypingModel, rng: np.random.Generator, duration_us: int) -> Keystrokes:
    """Lognormal inter-keystroke intervals around the model's median."""
    mu = math.log(typing.median_iki_ms * 1000.0)
    mean_iki = typing.median_iki_ms * 1000.0 * math.exp(typing.sigma ** 2 / 2)
    chunk = max(64, int(duration_us / mean_iki * 1.1))

    parts: List[np.ndarray] = []
    last = 0
    while last <= duration_us:
        ikis = np.maximum(1, rng.lognormal(mean=mu, sigma=typing.sigma, size=chunk)).astype(np.int64)
        ts = last + np.cumsum(ikis)
        parts.append(ts)
        last = int(ts[-1])
    timestamps = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    timestamps = timestamps[timestamps <= duration_us]

    u = rng.random(len(timestamps))
    classes = np.full(len(timestamps), int(KeyClass.PRINTABLE), dtype=np.int8)
    classes[u < typing.edit_probability + typing.navigation_probability] = int(KeyClass.NAVIGATION)
    classes[u < typing.edit_probability] = int(KeyClass.EDIT)
    letters = rng.integers(ord("a"), ord("z") + 1, size=len(timestamps), dtype=np.uint8).tobytes()
    return Keystrokes(timestamps, classes, letters)


# ---------------- fault schedule ----------------
def _poisson_times(rng: np.random.Generator, rate_per_s: float, duration_s: float) -> List[float]:
    if rate_per_s <= 0:
        return []
    out, t = [], 0.0
    while True:
        t += rng.exponential(1.0 / rate_per_s)
        if t > duration_s:
            return out
        out.append(t)


def build_schedule(profile: FaultProfile, duration_s: float, rng: np.random.Generator) -> List[FaultEvent]:
    """Time-ordered fault events for scripted and stochastic profiles; adversarial crashes are placed per tick."""
    if profile.mode == FaultMode.SCRIPTED:
        late = [e for e in profile.events if e.time_s > duration_s]
        if late:
            raise ConfigInvalid(f"fault at {late[0].time_s}s lies past the session end ({duration_s}s)")
        return sorted(profile.events, key=lambda e: e.time_s)
    if profile.mode == FaultMode.ADVERSARIAL_WORST_CASE:
        return []

    rates = profile.rates
    events: List[FaultEvent] = []
    for t in _poisson_times(rng, rates.lambda_c / 3600.0, duration_s):
        kind = FaultKind.SEAL_CORRUPT if rng.random() < rates.p_f else FaultKind.CRASH
        events.append(FaultEvent(time_s=t, kind=kind))

    busy_until = -1.0
    for t in _poisson_times(rng, rates.lambda_p / 3600.0, duration_s):
        length = rng.exponential(3600.0 / rates.mu_p)
        if t < busy_until:
            continue
        busy_until = t + length
        events.append(FaultEvent(time_s=t, kind=FaultKind.PARTITION_START))
        if busy_until <= duration_s:
            events.append(FaultEvent(time_s=busy_until, kind=FaultKind.PARTITION_END))
    return sorted(events, key=lambda e: e.time_s)


def _adversarial_targets(profile: FaultProfile, total_ticks: int) -> Set[int]:
    n = profile.n_crashes
    if n == 0:
        return set()
    if n > total_ticks:
        raise ConfigInvalid(f"{n} adversarial crashes but only {total_ticks} checkpoints in the session")
    return {max(1, round((j + 1) * total_ticks / (n + 1))) for j in range(n)}


def corrupt_sealed_state(store: SealedStore) -> None:
    """Flip one bit of the authentication tag of the latest sealed blob."""
    raw = bytearray(store.latest_path.read_bytes())
    raw[-1] ^= 0x01
    store.latest_path.write_bytes(bytes(raw))


# ---------------- simulator ----------------
class SessionSimulator:
    def __init__(
        self,
        config: SessionConfig,
        typing: TypingModel,
        profile: FaultProfile,
        seed: int,
        *,
        platform: PlatformRoot,
        workdir: Path | str,
        retain: int = 3,
        fsync: bool = False,
    ):
        self.config = config
        self.typing = typing
        self.profile = profile
        self.platform = platform
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.store = open_store(platform, config, self.workdir / "store", retain=retain, fsync=fsync)

        self.interval_us = config.interval_us
        self.duration_us = int(round(typing.session_duration_s * US))
        self.keys = generate_keystrokes(typing, self.rng, self.duration_us)
        self.faults = build_schedule(profile, typing.session_duration_s, self.rng)
        self.targets = (
            _adversarial_targets(profile, self.duration_us // self.interval_us)
            if profile.mode == FaultMode.ADVERSARIAL_WORST_CASE else set()
        )

        self.session: Optional[Session] = None
        self.framer: Optional[BatchFramer] = None
        self.chain_paths: List[Path] = []
        self.nonces: List[bytes] = []
        self.records: List[FaultRecord] = []
        self.lifecycle: Counter = Counter()
        self._bus = None

        self.document = bytearray()
        self.fed = 0          # keystrokes handed to the framer
        self.typed = 0        # keystrokes applied to the document
        self.ticks = 0
        self.last_sealed_us = 0
        self.next_tick_us = self.interval_us
        self.partitioned = False
        self.reconnect_at: Optional[int] = None
        self._open_partition: Optional[FaultRecord] = None

    # ---- session plumbing ----
    def _attach(self, session: Session) -> None:
        self._detach()
        self.session = session
        self.framer = BatchFramer(session.channel_key)
        self._bus = event_bus.subscribe(session.tag)

    def _detach(self) -> None:
        if self.session is None or self._bus is None:
            return
        self._collect()
        event_bus.unsubscribe(self.session.tag, self._bus)
        event_bus.clear(self.session.tag)
        self._bus = None

    def _collect(self) -> None:
        if self._bus is not None:
            self.lifecycle.update(e.get("stage", "?") for e in event_bus.drain(self._bus))

    def _new_chain(self) -> Path:
        path = self.workdir / f"chain-{len(self.chain_paths):03d}.bin"
        self.chain_paths.append(path)
        nonce = self.rng.bytes(32)
        self.nonces.append(nonce)
        return path

    def _skip_input(self, time_us: int) -> None:
        """Keystrokes before `time_us` were typed while the session was down."""
        self.framer.skip_to(time_us)
        self.fed = max(self.fed, self.keys.index_before(time_us))

    def _type_until(self, time_us: int) -> None:
        stop = int(np.searchsorted(self.keys.timestamps, time_us, side="right"))
        for i in range(self.typed, stop):
            cls = self.keys.classes[i]
            if cls == KeyClass.PRINTABLE:
                self.document.append(self.keys.letters[i])
            elif cls == KeyClass.EDIT and self.document:
                self.document.pop()
        self.typed = max(self.typed, stop)

    # ---- faults ----
    def _partition_start(self, time_us: int) -> None:
        if self.partitioned:
            return
        self.partitioned = True
        self.reconnect_at = None
        if self.session is not None and not self.session.crashed:
            go_offline(self.session)
        self._open_partition = FaultRecord(
            time_s=time_us / US, kind=FaultKind.PARTITION_START, outcome=FaultOutcome.PARTITION,
            session_ordinal=len(self.chain_paths) - 1,
        )
        self.records.append(self._open_partition)

    def _partition_end(self, time_us: int) -> None:
        if not self.partitioned:
            return
        self.partitioned = False
        self.reconnect_at = time_us
        self.records.append(FaultRecord(
            time_s=time_us / US, kind=FaultKind.PARTITION_END, outcome=FaultOutcome.PARTITION,
            session_ordinal=len(self.chain_paths) - 1,
            downtime_s=(time_us / US) - (self._open_partition.time_s if self._open_partition else time_us / US),
        ))

    def _crash(self, time_us: int, kind: FaultKind, fi: int) -> int:
        """Crash, absorb faults that land during the downtime, then recover or cold-restart."""
        crash(self.session)
        record = FaultRecord(
            time_s=time_us / US, kind=kind, outcome=FaultOutcome.RECOVERED,
            session_ordinal=len(self.chain_paths) - 1,
            lost_evidence_s=(time_us - self.last_sealed_us) / US,
        )
        self.records.append(record)
        corrupted = kind == FaultKind.SEAL_CORRUPT
        if corrupted:
            corrupt_sealed_state(self.store)

        def resume_at(t: int) -> int:
            delay = self.profile.cold_restart_delay_s if corrupted else self.profile.recovery_delay_s
            return t + int(round(delay * US))

        resume = resume_at(time_us)
        while fi < len(self.faults) and int(round(self.faults[fi].time_s * US)) < resume:
            ev = self.faults[fi]
            t = int(round(ev.time_s * US))
            fi += 1
            if ev.kind in _CRASHES:
                self.records.append(FaultRecord(
                    time_s=ev.time_s, kind=ev.kind, outcome=FaultOutcome.STACKED,
                    session_ordinal=len(self.chain_paths) - 1,
                ))
                if ev.kind == FaultKind.SEAL_CORRUPT and not corrupted:
                    corrupted = True
                    corrupt_sealed_state(self.store)
                resume = resume_at(t)
            elif ev.kind == FaultKind.PARTITION_START:
                self._partition_start(t)
            else:
                self._partition_end(t)

        try:
            session, cp = recover(self.config, self.store, platform=self.platform, now_us=resume)
            self._collect()
            self.session = session
            record.marker_index = cp.index
            self._skip_input(resume)
        except SealCorrupted:
            logger.warning("[sim] sealed state unusable at %.3fs; cold restart", resume / US)
            record.outcome = FaultOutcome.COLD_RESTART
            previous = self.chain_paths[-1]
            path = self._new_chain()
            session = cold_restart(
                self.config, self.nonces[-1], platform=self.platform, store=self.store,
                chain_path=path, now_us=resume, random_bytes=self.rng.bytes, previous_chain=previous,
            )
            record.lost_buffered = len(session.salvage.lost) if session.salvage else 0
            self._attach(session)
            self.reconnect_at = None
            self._skip_input(resume)
        record.downtime_s = (resume - time_us) / US

        if self.partitioned and not self.session.offline:
            go_offline(self.session)
        elif not self.partitioned and self.session.offline and self.reconnect_at is None:
            self.reconnect_at = resume
        self.last_sealed_us = resume
        self.next_tick_us = resume + self.interval_us
        return fi

    # ---- checkpoints ----
    def _tick(self, time_us: int) -> None:
        stop = self.keys.index_before(time_us)
        for batch in self.framer.frames(self.keys.events(self.fed, stop), until_us=time_us):
            channel_submit(self.session.channel, batch)
        self.fed = max(self.fed, stop)
        self._type_until(time_us)

        flush_after = False
        if self.reconnect_at is not None:
            if time_us - self.interval_us >= self.reconnect_at:
                go_online(self.session)
                self.reconnect_at = None
            else:
                flush_after = True

        cp = checkpoint_tick(self.session, None, bytes(self.document), now_us=time_us)
        if self.session.offline and self._open_partition is not None and self._open_partition.marker_index is None:
            self._open_partition.marker_index = cp.index
        if flush_after:
            go_online(self.session)
            self.reconnect_at = None

        self.ticks += 1
        self.last_sealed_us = time_us
        self.next_tick_us = time_us + self.interval_us

    def run(self) -> SessionRun:
        lead_us = int(round(self.profile.adversarial_lead_s * US))
        path = self._new_chain()
        session, _ = session_init(
            self.config, self.nonces[-1], platform=self.platform, store=self.store,
            chain_path=path, now_us=0, random_bytes=self.rng.bytes,
        )
        self._attach(session)

        fi = 0
        with Timer(f"simulated session ({self.typing.session_duration_s:.0f}s)"):
            while True:
                t_tick = self.next_tick_us
                t_fault = int(round(self.faults[fi].time_s * US)) if fi < len(self.faults) else None
                if t_fault is not None and t_fault <= t_tick and t_fault <= self.duration_us:
                    ev = self.faults[fi]
                    fi += 1
                    if ev.kind in _CRASHES:
                        fi = self._crash(t_fault, ev.kind, fi)
                    elif ev.kind == FaultKind.PARTITION_START:
                        self._partition_start(t_fault)
                    else:
                        self._partition_end(t_fault)
                    continue
                if t_tick > self.duration_us:
                    break
                if (self.ticks + 1) in self.targets:
                    self.targets.discard(self.ticks + 1)
                    fi = self._crash(max(self.last_sealed_us + 1, t_tick - lead_us), FaultKind.CRASH, fi)
                    continue
                self._tick(t_tick)

            if self.session.offline:
                go_online(self.session)
        self._detach()

        chains = [codec.read_chain_file(p) for p in self.chain_paths]
        logger.info(
            "[sim] %d checkpoints over %d chain(s), %d fault records",
            sum(len(c.checkpoints) for c in chains), len(chains), len(self.records),
        )
        return SessionRun(
            chains=chains,
            chain_paths=[str(p) for p in self.chain_paths],
            verifier_nonces=self.nonces,
            fault_log=self.records,
            checkpoint_interval_s=self.config.checkpoint_interval_s,
            duration_s=self.typing.session_duration_s,
            lifecycle_counts=dict(self.lifecycle),
        )


def run_session(
    config: SessionConfig,
    typing: TypingModel,
    profile: FaultProfile,
    seed: int,
    *,
    platform: PlatformRoot,
    workdir: Path | str,
    retain: int = 3,
    fsync: bool = False,
) -> SessionRun:
    return SessionSimulator(
        config, typing, profile, seed, platform=platform, workdir=workdir, retain=retain, fsync=fsync
    ).run()


# ---------------- recovery latency ----------------
def _stats(samples_s: List[float]) -> LatencyStats:
    ms = np.asarray(samples_s) * 1000.0
    return LatencyStats(
        mean_ms=float(ms.mean()),
        p99_ms=float(np.percentile(ms, 99)),
        min_ms=float(ms.min()),
        max_ms=float(ms.max()),
        samples=len(ms),
    )


def bench_recovery(
    config: SessionConfig, repetitions: int, *, platform: PlatformRoot, workdir: Path | str, seed: int = 0
) -> RecoveryBench:
    """Wall-clock latency of sealed recovery against a cold restart up to its first checkpoint."""
    if repetitions < 1:
        raise ConfigInvalid("repetitions must be >= 1")
    workdir = Path(workdir)
    rng = np.random.Generator(np.random.PCG64(seed))
    interval = config.interval_us
    sealed, cold = [], []

    for rep in range(repetitions):
        store = open_store(platform, config, workdir / f"bench-{rep}" / "store", fsync=False)
        chain = workdir / f"bench-{rep}" / "chain.bin"
        session, _ = session_init(
            config, rng.bytes(32), platform=platform, store=store, chain_path=chain, random_bytes=rng.bytes
        )
        checkpoint_tick(session, [], b"", now_us=interval)
        crash(session)
        event_bus.clear(session.tag)

        with Timer("sealed recovery", quiet=True) as t:
            recovered, _ = recover(config, store, platform=platform, now_us=interval + US)
        sealed.append(t.elapsed)
        crash(recovered)

        with Timer("cold restart", quiet=True) as t:
            fresh = cold_restart(
                config, rng.bytes(32), platform=platform, store=store,
                chain_path=workdir / f"bench-{rep}" / "chain-cold.bin", random_bytes=rng.bytes,
            )
            checkpoint_tick(fresh, [], b"", now_us=interval)
        cold.append(t.elapsed)
        event_bus.clear(recovered.tag)
        event_bus.clear(fresh.tag)

    result = RecoveryBench(
        sealed=_stats(sealed), cold=_stats(cold), repetitions=repetitions, memory_cost=config.swf.mh.memory_cost
    )
    logger.info("[bench] sealed %.2f ms mean, cold %.2f ms mean", result.sealed.mean_ms, result.cold.mean_ms)
    return result
