"""
Simulated-enclave session engine.

A session builds one checkpoint per interval: behavioral features from the
input channel, an SWF step chained from the previous output, a CDCE tag keyed
by the SWF output, the chain hash and a signature. After every checkpoint the
session state is sealed under the monotonic counter, then the checkpoint is
appended to the chain file (or to the offline spool while partitioned).
"""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Set, Tuple

from pydantic import ValidationError

from ..core import crypto_core as crypto
from ..core import event_bus
from ..core.crypto_core import KeyPair, PlatformRoot
from ..core.errors import (
    AttestError,
    ConfigInvalid,
    ParseError,
    PersistenceFailure,
    RollbackDetected,
    SealCorrupted,
    SimulatedCrash,
    TickTooEarly,
)
from ..core.persistence import append_bytes, atomic_write
from ..core.sealed_store import SealedStore
from ..models.evidence import (
    BehavioralFeatures,
    BufferManifestEntry,
    ChainHeader,
    Checkpoint,
    CheckpointPayload,
    InterruptPoint,
    KeystrokeEvent,
    Marker,
    MarkerKind,
    NORMAL_MARKER,
    RefreshQuote,
    SealedSessionState,
    SessionConfig,
    SpoolSalvage,
)
from ..models.platform import AttestationQuote
from . import codec
from .behavior import EventChannel, channel_open, extract_features
from .swf import swf_init, swf_step

logger = logging.getLogger(__name__)

RandomBytes = Callable[[int], bytes]


def config_measurement(config: SessionConfig) -> bytes:
    return crypto.measurement(codec.encode_session_config(config))


def open_store(
    platform: PlatformRoot, config: SessionConfig, directory: Path | str, *, retain: int = 3, fsync: bool = True
) -> SealedStore:
    """Sealed store keyed to this platform and this session configuration."""
    key = platform.seal_key(config_measurement(config))
    return SealedStore(directory, key, retain=retain, fsync=fsync)


class Session:
    """In-memory state of one running session. Lost on crash."""

    def __init__(
        self,
        *,
        config: SessionConfig,
        platform: PlatformRoot,
        store: SealedStore,
        session_id: bytes,
        verifier_nonce: bytes,
        keypair: KeyPair,
        channel_key: bytes,
        chain_path: Path,
        quote: AttestationQuote,
        prev_chain_hash: bytes,
        swf_prev_output: bytes,
        next_index: int,
        last_local_time_us: int,
        watermark: int = 0,
        offline: bool = False,
        offline_manifest: Optional[List[BufferManifestEntry]] = None,
    ):
        self.config = config
        self.platform = platform
        self.store = store
        self.session_id = session_id
        self.verifier_nonce = verifier_nonce
        self.keypair = keypair
        self.channel_key = channel_key
        self.channel: EventChannel = channel_open(channel_key, watermark)
        self.chain_path = Path(chain_path)
        self.quote = quote
        self.measurement = config_measurement(config)
        self.prev_chain_hash = prev_chain_hash
        self.swf_prev_output = swf_prev_output
        self.next_index = next_index
        self.last_local_time_us = last_local_time_us
        self.offline = offline
        self.offline_manifest: List[BufferManifestEntry] = list(offline_manifest or [])
        self.last_checkpoint: Optional[Checkpoint] = None
        self.last_leaves: List[bytes] = []
        self.last_refresh: Optional[RefreshQuote] = None
        self.crashed = False
        self.salvage: Optional[SpoolSalvage] = None

    @property
    def tag(self) -> str:
        return self.session_id.hex()

    @property
    def public_key(self) -> bytes:
        return self.keypair.public

    def sealed_state(self, counter_value: int) -> SealedSessionState:
        return SealedSessionState(
            session_id=self.session_id,
            config=self.config,
            verifier_nonce=self.verifier_nonce,
            signing_seed=self.keypair.seed,
            channel_key=self.channel_key,
            chain_path=str(self.chain_path),
            last_checkpoint=codec.encode_checkpoint(self.last_checkpoint) if self.last_checkpoint else None,
            last_leaves=b"".join(self.last_leaves) if self.last_checkpoint else None,
            last_quote=codec.encode_refresh_quote(self.last_refresh) if self.last_refresh else None,
            prev_chain_hash=self.prev_chain_hash,
            swf_prev_output=self.swf_prev_output,
            next_index=self.next_index,
            last_local_time_us=self.last_local_time_us,
            watermark=self.channel.watermark,
            offline=self.offline,
            offline_manifest=self.offline_manifest,
            counter_value=counter_value,
        )

    def _require_alive(self) -> None:
        if self.crashed:
            raise AttestError("session has crashed; recover or cold-restart it")


def _publish(session: Session, stage: str, **fields) -> None:
    event_bus.publish(session.tag, {"stage": stage, "session": session.tag, **fields})


def _seal(session: Session) -> int:
    v = session.store.counter.increment()
    state = session.sealed_state(v)
    session.store.write_sealed(state.model_dump_json().encode("utf-8"), v)
    return v


def _check_store(platform: PlatformRoot, config: SessionConfig, store: SealedStore) -> None:
    if store.key_id != crypto.seal_key_id(platform.seal_key(config_measurement(config))):
        raise ConfigInvalid("sealed store is keyed to a different platform or configuration")


# ---------------- lifecycle ----------------
def session_init(
    config: SessionConfig,
    verifier_nonce: bytes,
    *,
    platform: PlatformRoot,
    store: SealedStore,
    chain_path: Path | str,
    now_us: int = 0,
    random_bytes: RandomBytes = os.urandom,
) -> Tuple[Session, AttestationQuote]:
    _check_store(platform, config, store)
    session_id = random_bytes(16)
    try:
        out_0 = swf_init(verifier_nonce, session_id)
    except ValueError as e:
        raise ConfigInvalid(str(e)) from e

    keypair = KeyPair.from_seed(random_bytes(32))
    channel_key = random_bytes(32)
    measurement = config_measurement(config)
    quote = platform.issue_quote(measurement, keypair.public, verifier_nonce)

    header = ChainHeader(
        session_id=session_id,
        public_key=keypair.public,
        verifier_nonce=verifier_nonce,
        tier=config.tier,
        tee_available=config.tee_available,
        interval_us=config.interval_us,
        entropy_threshold=config.entropy_threshold,
        quote_every_n=config.quote_every_n,
        swf_params=config.swf,
        quote=quote,
        header_signature=b"\x00" * 64,
    )
    header = header.model_copy(update={"header_signature": keypair.sign(codec.header_signing_message(header))})
    chain_path = Path(chain_path)
    atomic_write(chain_path, codec.encode_header(header), fsync=store.fsync)

    session = Session(
        config=config,
        platform=platform,
        store=store,
        session_id=session_id,
        verifier_nonce=verifier_nonce,
        keypair=keypair,
        channel_key=channel_key,
        chain_path=chain_path,
        quote=quote,
        prev_chain_hash=codec.genesis_hash(session_id, verifier_nonce),
        swf_prev_output=out_0,
        next_index=1,
        last_local_time_us=now_us,
    )
    store.spool_clear()
    _seal(session)
    logger.info("[session] %s initialised -> %s", session.tag[:8], chain_path)
    _publish(session, "init", time_us=now_us)
    return session, quote


def _build_checkpoint(
    session: Session, events: Sequence[KeystrokeEvent], content_hash: bytes, now_us: int, marker: Marker
) -> Tuple[Checkpoint, List[bytes], Optional[RefreshQuote]]:
    index = session.next_index
    proof, leaves = swf_step(session.config.swf, session.swf_prev_output, index, session.session_id)
    behavioral = extract_features(events) if events else BehavioralFeatures()
    payload = CheckpointPayload(
        session_id=session.session_id,
        index=index,
        content_hash=content_hash,
        behavioral=behavioral,
        swf=proof,
        local_time_us=now_us,
        marker=marker,
    )
    h = codec.chain_hash(session.prev_chain_hash, payload)
    cp = Checkpoint(
        payload=payload,
        cdce_tag=codec.cdce_tag(payload),
        chain_hash=h,
        signature=session.keypair.sign(codec.checkpoint_signing_message(h)),
    )
    refresh = None
    if index % session.config.quote_every_n == 0:
        refresh = RefreshQuote(
            at_index=index, quote=session.platform.issue_quote(session.measurement, session.public_key, h)
        )
    return cp, leaves, refresh


def _emit(session: Session, index: int, bundle: bytes) -> None:
    if session.offline:
        session.store.spool_append(index, bundle)
    else:
        append_bytes(session.chain_path, bundle, fsync=session.store.fsync)


def _advance(
    session: Session,
    events: Sequence[KeystrokeEvent],
    content_hash: bytes,
    now_us: int,
    marker: Marker,
    interrupt: Optional[InterruptPoint],
) -> Checkpoint:
    cp, leaves, refresh = _build_checkpoint(session, events, content_hash, now_us, marker)
    bundle = codec.checkpoint_bundle(cp, leaves, refresh)

    session.prev_chain_hash = cp.chain_hash
    session.swf_prev_output = cp.payload.swf.output
    session.next_index = cp.index + 1
    session.last_local_time_us = now_us
    session.last_checkpoint, session.last_leaves, session.last_refresh = cp, leaves, refresh
    if session.offline:
        session.offline_manifest.append(BufferManifestEntry(index=cp.index, record_digest=crypto.hash(bundle)))

    if interrupt == InterruptPoint.BEFORE_SEAL:
        crash(session)
        raise SimulatedCrash(interrupt.value)
    _seal(session)
    if interrupt == InterruptPoint.AFTER_SEAL:
        crash(session)
        raise SimulatedCrash(interrupt.value)

    _emit(session, cp.index, bundle)
    logger.debug(
        "[session] %s checkpoint %d (%s, %d keys)",
        session.tag[:8], cp.index, marker.kind.name, cp.payload.behavioral.keystroke_count,
    )
    _publish(session, "checkpoint", index=cp.index, marker=marker.kind.name, time_us=now_us)
    return cp


def checkpoint_tick(
    session: Session,
    events: Optional[Sequence[KeystrokeEvent]] = None,
    document: bytes = b"",
    *,
    now_us: int,
    interrupt: Optional[InterruptPoint] = None,
) -> Checkpoint:
    """Produce the next checkpoint. `events=None` drains the input channel."""
    session._require_alive()
    if now_us - session.last_local_time_us < session.config.interval_us:
        raise TickTooEarly(
            f"tick at {now_us} us, previous at {session.last_local_time_us} us, interval {session.config.interval_us} us"
        )
    window = session.channel.drain() if events is None else list(events)
    marker = Marker(kind=MarkerKind.OFFLINE_BUFFERED) if session.offline else NORMAL_MARKER
    return _advance(session, window, crypto.hash(document), now_us, marker, interrupt)


def crash(session: Session) -> None:
    """Abrupt termination: only the sealed store and the counter survive."""
    if session.crashed:
        return
    session.crashed = True
    session.channel.drain()
    session.keypair = None  # type: ignore[assignment]
    logger.info("[session] %s crashed", session.tag[:8])
    _publish(session, "crash")


def _written_indices(session: Session) -> Set[int]:
    try:
        return {cp.index for cp in codec.read_chain_file(session.chain_path).checkpoints}
    except ParseError as e:
        raise PersistenceFailure(f"chain file {session.chain_path} unreadable: {e}") from e


def _restore_last(session: Session, state: SealedSessionState) -> None:
    if state.last_checkpoint is None:
        return
    cp = codec.decode_checkpoint(state.last_checkpoint)
    raw = state.last_leaves or b""
    leaves = [raw[i:i + 32] for i in range(0, len(raw), 32)]
    refresh = codec.decode_refresh_quote(state.last_quote) if state.last_quote else None
    session.last_checkpoint, session.last_leaves, session.last_refresh = cp, leaves, refresh

    if state.offline:
        present = {i for i, _ in session.store.spool_entries()} | _written_indices(session)
    else:
        present = _written_indices(session)
    if cp.index not in present:
        logger.info("[session] %s re-emitting sealed checkpoint %d", session.tag[:8], cp.index)
        _emit(session, cp.index, codec.checkpoint_bundle(cp, leaves, refresh))


def recover(
    config: SessionConfig,
    store: SealedStore,
    *,
    platform: PlatformRoot,
    now_us: int,
) -> Tuple[Session, Checkpoint]:
    """Resume from the sealed state and emit a Recovery checkpoint recording the gap."""
    _check_store(platform, config, store)
    plaintext = store.read_sealed()
    try:
        state = SealedSessionState.model_validate_json(plaintext)
    except ValidationError as e:
        raise SealCorrupted(f"sealed state does not decode: {e}") from e
    if state.counter_value != store.counter.value:
        raise RollbackDetected(f"state counter {state.counter_value}, live counter {store.counter.value}")
    if state.config != config:
        raise ConfigInvalid("sealed state was produced under a different configuration")

    keypair = KeyPair.from_seed(state.signing_seed)
    quote = platform.issue_quote(config_measurement(config), keypair.public, state.verifier_nonce)
    session = Session(
        config=config,
        platform=platform,
        store=store,
        session_id=state.session_id,
        verifier_nonce=state.verifier_nonce,
        keypair=keypair,
        channel_key=state.channel_key,
        chain_path=Path(state.chain_path),
        quote=quote,
        prev_chain_hash=state.prev_chain_hash,
        swf_prev_output=state.swf_prev_output,
        next_index=state.next_index,
        last_local_time_us=state.last_local_time_us,
        watermark=state.watermark,
        offline=state.offline,
        offline_manifest=state.offline_manifest,
    )
    _restore_last(session, state)

    gap = max(1, now_us - state.last_local_time_us)
    logger.info("[session] %s recovering at index %d, gap %.3fs", session.tag[:8], session.next_index, gap / 1e6)
    # no input arrives during the gap, so the document is unchanged
    content_hash = session.last_checkpoint.payload.content_hash if session.last_checkpoint else crypto.hash(b"")
    cp = _advance(session, [], content_hash, max(now_us, state.last_local_time_us + 1),
                  Marker(kind=MarkerKind.RECOVERY, gap_us=gap), None)
    _publish(session, "recover", index=cp.index, gap_us=gap, time_us=now_us)
    return session, cp


def salvage_spool(store: SealedStore, chain_path: Path | str) -> SpoolSalvage:
    """
    Append spooled checkpoints to the chain they were buffered for, without
    the sealed manifest: each bundle must carry the next index, link to the
    chain hash before it and be signed by the chain's session key. The first
    bundle that fails stops the walk; it and everything after are lost.
    """
    try:
        entries = sorted(store.spool_entries(), key=lambda e: e[0])
    except ParseError as e:
        logger.warning("[session] offline spool unreadable, buffered checkpoints lost: %s", e)
        return SpoolSalvage()
    if not entries:
        return SpoolSalvage()

    chain_path = Path(chain_path)
    try:
        f = codec.read_chain_file(chain_path)
    except (ParseError, PersistenceFailure) as e:
        logger.warning("[session] cannot salvage spool into %s: %s", chain_path, e)
        return SpoolSalvage(lost=[i for i, _ in entries])

    header = f.header
    if f.checkpoints:
        prev_hash, next_index = f.checkpoints[-1].chain_hash, f.checkpoints[-1].index + 1
    else:
        prev_hash, next_index = codec.genesis_hash(header.session_id, header.verifier_nonce), 1

    salvaged: List[int] = []
    lost: List[int] = []
    for index, bundle in entries:
        if lost:
            lost.append(index)
            continue
        if index < next_index:
            continue
        try:
            cp, _, _ = codec.parse_bundle(bundle)
        except ParseError as e:
            logger.warning("[session] spooled checkpoint %d unreadable: %s", index, e)
            lost.append(index)
            continue
        authentic = (
            cp.index == index == next_index
            and cp.payload.session_id == header.session_id
            and codec.chain_hash(prev_hash, cp.payload) == cp.chain_hash
            and crypto.verify_signature(header.public_key, codec.checkpoint_signing_message(cp.chain_hash), cp.signature)
        )
        if not authentic:
            logger.warning("[session] spooled checkpoint %d failed authentication", index)
            lost.append(index)
            continue
        append_bytes(chain_path, bundle, fsync=store.fsync)
        salvaged.append(index)
        prev_hash, next_index = cp.chain_hash, index + 1

    logger.info(
        "[session] salvaged %d buffered checkpoint(s) into %s, lost %d", len(salvaged), chain_path.name, len(lost)
    )
    return SpoolSalvage(salvaged=salvaged, lost=lost)


def cold_restart(
    config: SessionConfig,
    verifier_nonce: bytes,
    *,
    platform: PlatformRoot,
    store: SealedStore,
    chain_path: Path | str,
    now_us: int = 0,
    random_bytes: RandomBytes = os.urandom,
    previous_chain: Optional[Path | str] = None,
) -> Session:
    """
    Abandon the sealed state and start a fresh session in a new chain file.
    Buffered checkpoints are first salvaged into `previous_chain` when given.
    """
    if previous_chain is not None:
        salvage = salvage_spool(store, previous_chain)
    else:
        salvage = SpoolSalvage(lost=[i for i, _ in _spool_or_empty(store)])
    if salvage.lost:
        logger.warning("[session] cold restart drops buffered checkpoints %s", salvage.lost)
    store.wipe()
    session, _ = session_init(
        config, verifier_nonce, platform=platform, store=store, chain_path=chain_path,
        now_us=now_us, random_bytes=random_bytes,
    )
    session.salvage = salvage
    logger.info("[session] cold restart -> %s", session.tag[:8])
    _publish(session, "cold_restart", time_us=now_us, salvaged=len(salvage.salvaged), lost=len(salvage.lost))
    return session


def _spool_or_empty(store: SealedStore) -> List[Tuple[int, bytes]]:
    try:
        return store.spool_entries()
    except ParseError:
        return []


# ---------------- offline ----------------
def go_offline(session: Session) -> None:
    session._require_alive()
    if session.offline:
        return
    session.offline = True
    logger.info("[session] %s offline; buffering checkpoints", session.tag[:8])
    _publish(session, "offline")


def go_online(session: Session) -> int:
    """Flush buffered checkpoints to the chain file in index order; returns the count flushed."""
    session._require_alive()
    if not session.offline and not session.offline_manifest:
        return 0

    written = _written_indices(session)
    spooled = dict(session.store.spool_entries())
    flushed = 0
    for entry in sorted(session.offline_manifest, key=lambda e: e.index):
        if entry.index in written:
            continue
        bundle = spooled.get(entry.index)
        if bundle is None:
            raise PersistenceFailure(f"buffered checkpoint {entry.index} missing from spool")
        if crypto.hash(bundle) != entry.record_digest:
            raise PersistenceFailure(f"buffered checkpoint {entry.index} does not match the manifest")
        append_bytes(session.chain_path, bundle, fsync=session.store.fsync)
        flushed += 1

    session.store.spool_clear()
    session.offline = False
    session.offline_manifest = []
    _seal(session)
    logger.info("[session] %s online; flushed %d checkpoints", session.tag[:8], flushed)
    _publish(session, "online", flushed=flushed)
    return flushed

