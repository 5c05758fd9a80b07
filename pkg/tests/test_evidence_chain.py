import numpy as np
import pytest

from backend.app.core import crypto_core as crypto
from backend.app.core import event_bus
from backend.app.core.errors import (
    AttestError,
    ConfigInvalid,
    PersistenceFailure,
    RollbackDetected,
    SealCorrupted,
    SimulatedCrash,
    TickTooEarly,
)
from backend.app.models.evidence import InterruptPoint, MarkerKind
from backend.app.models.verification import Verdict, VerificationPolicy
from backend.app.services import codec
from backend.app.services.evidence_chain import (
    checkpoint_tick,
    cold_restart,
    crash,
    go_offline,
    go_online,
    open_store,
    recover,
    session_init,
)
from backend.app.services.verifier import verify_chain

from .conftest import NONCE, keystrokes


def _verify(platform, path, nonce=NONCE):
    return verify_chain(codec.read_chain_file(path), VerificationPolicy(), nonce, root_public_key=platform.public_key)


def test_init_writes_signed_header(new_session, platform, config):
    session, quote = new_session()
    f = codec.read_chain_file(session.chain_path)
    assert f.checkpoints == []
    assert f.header.quote == quote
    assert quote.bound_public_key == session.public_key
    assert f.header.session_config() == config
    assert _verify(platform, session.chain_path).verdict == Verdict.VALID


def test_short_nonce_rejected(new_session):
    with pytest.raises(ConfigInvalid):
        new_session(nonce=b"short")


def test_store_keyed_to_other_config_rejected(new_session, config, platform, tmp_path):
    other = config.model_copy(update={"checkpoint_interval_s": 10.0})
    store = open_store(platform, other, tmp_path / "other", fsync=False)
    with pytest.raises(ConfigInvalid):
        session_init(config, NONCE, platform=platform, store=store, chain_path=tmp_path / "c.bin")


def test_ticks_chain_and_verify(honest_chain, platform):
    f = codec.read_chain_file(honest_chain.chain_path)
    assert [cp.payload.marker.kind for cp in f.checkpoints] == [MarkerKind.NORMAL] * 5
    assert f.checkpoints[0].payload.behavioral.keystroke_count == 40
    assert _verify(platform, honest_chain.chain_path).verdict == Verdict.VALID


def test_tick_too_early(new_session, config):
    session, _ = new_session()
    with pytest.raises(TickTooEarly):
        checkpoint_tick(session, [], now_us=config.interval_us - 1)


def test_tick_drains_channel(new_session, config):
    from backend.app.services.behavior import make_batch

    session, _ = new_session()
    session.channel.submit(make_batch(session.channel_key, keystrokes(1_000, 5), 0))
    cp = checkpoint_tick(session, now_us=config.interval_us)
    assert cp.payload.behavioral.keystroke_count == 5


def test_refresh_quote_cadence(new_session, config, platform):
    session, _ = new_session(cfg=config.model_copy(update={"quote_every_n": 2}))
    for i in range(1, 5):
        checkpoint_tick(session, [], now_us=i * config.interval_us)
    f = codec.read_chain_file(session.chain_path)
    assert [rq.at_index for rq in f.refresh_quotes] == [2, 4]
    assert f.refresh_quotes[0].quote.nonce == f.checkpoints[1].chain_hash


def test_crash_and_recover_adds_marker(honest_chain, config, platform, store):
    crash(honest_chain)
    later = 5 * config.interval_us + 7_000_000
    session, cp = recover(config, store, platform=platform, now_us=later)
    assert cp.payload.marker.kind == MarkerKind.RECOVERY
    assert cp.payload.marker.gap_us == 7_000_000
    assert cp.index == 6
    checkpoint_tick(session, [], now_us=later + config.interval_us)
    report = _verify(platform, session.chain_path)
    assert report.verdict == Verdict.VALID_WITH_GAPS
    assert [g.index for g in report.gaps] == [6]


def test_crashed_session_refuses_ticks(honest_chain, config):
    crash(honest_chain)
    with pytest.raises(AttestError):
        checkpoint_tick(honest_chain, [], now_us=10 * config.interval_us)


def test_crash_before_seal_loses_checkpoint(honest_chain, config, platform, store):
    with pytest.raises(SimulatedCrash):
        checkpoint_tick(honest_chain, [], now_us=6 * config.interval_us, interrupt=InterruptPoint.BEFORE_SEAL)
    session, cp = recover(config, store, platform=platform, now_us=6 * config.interval_us + 1_000_000)
    assert cp.index == 6
    assert _verify(platform, session.chain_path).verdict == Verdict.VALID_WITH_GAPS


def test_crash_after_seal_reemits_checkpoint(honest_chain, config, platform, store):
    with pytest.raises(SimulatedCrash):
        checkpoint_tick(honest_chain, [], now_us=6 * config.interval_us, interrupt=InterruptPoint.AFTER_SEAL)
    assert len(codec.read_chain_file(honest_chain.chain_path).checkpoints) == 5
    session, cp = recover(config, store, platform=platform, now_us=6 * config.interval_us + 1_000_000)
    f = codec.read_chain_file(session.chain_path)
    assert [c.index for c in f.checkpoints] == [1, 2, 3, 4, 5, 6, 7]
    assert cp.index == 7
    assert _verify(platform, session.chain_path).verdict == Verdict.VALID_WITH_GAPS


def test_rollback_refused(honest_chain, config, platform, store):
    stale = store.retained_blobs()[0]
    crash(honest_chain)
    store.restore_blob(stale)
    with pytest.raises(RollbackDetected):
        recover(config, store, platform=platform, now_us=10 * config.interval_us)


def test_corrupt_seal_then_cold_restart(honest_chain, config, platform, store, tmp_path):
    crash(honest_chain)
    raw = bytearray(store.latest_path.read_bytes())
    raw[-1] ^= 1
    store.latest_path.write_bytes(bytes(raw))
    with pytest.raises(SealCorrupted):
        recover(config, store, platform=platform, now_us=10 * config.interval_us)

    nonce2 = b"second-verifier-nonce-0123456789"
    fresh = cold_restart(config, nonce2, platform=platform, store=store, chain_path=tmp_path / "cold.bin",
                         now_us=10 * config.interval_us)
    assert fresh.session_id != honest_chain.session_id
    checkpoint_tick(fresh, [], now_us=11 * config.interval_us)
    assert _verify(platform, tmp_path / "cold.bin", nonce2).verdict == Verdict.VALID
    assert _verify(platform, honest_chain.chain_path).verdict == Verdict.VALID


def test_offline_buffering_and_flush(honest_chain, config, platform, store):
    step = config.interval_us
    go_offline(honest_chain)
    for i in range(6, 9):
        cp = checkpoint_tick(honest_chain, [], now_us=i * step)
        assert cp.payload.marker.kind == MarkerKind.OFFLINE_BUFFERED
    assert len(codec.read_chain_file(honest_chain.chain_path).checkpoints) == 5
    assert [i for i, _ in store.spool_entries()] == [6, 7, 8]

    assert go_online(honest_chain) == 3
    assert store.spool_entries() == []
    checkpoint_tick(honest_chain, [], now_us=9 * step)
    f = codec.read_chain_file(honest_chain.chain_path)
    assert [c.index for c in f.checkpoints] == list(range(1, 10))
    report = _verify(platform, honest_chain.chain_path)
    assert report.verdict == Verdict.VALID_WITH_GAPS
    assert [g.index for g in report.gaps] == [6, 7, 8]


def test_crash_while_offline_keeps_spool(honest_chain, config, platform, store):
    step = config.interval_us
    go_offline(honest_chain)
    checkpoint_tick(honest_chain, [], now_us=6 * step)
    crash(honest_chain)
    session, cp = recover(config, store, platform=platform, now_us=6 * step + 2_000_000)
    assert session.offline
    assert [i for i, _ in store.spool_entries()] == [6, 7]
    go_online(session)
    assert _verify(platform, session.chain_path).verdict == Verdict.VALID_WITH_GAPS


def test_tampered_spool_refused(honest_chain, config, store):
    go_offline(honest_chain)
    checkpoint_tick(honest_chain, [], now_us=6 * config.interval_us)
    raw = bytearray(store.spool_path.read_bytes())
    raw[-1] ^= 1
    store.spool_path.write_bytes(bytes(raw))
    with pytest.raises(PersistenceFailure):
        go_online(honest_chain)


def test_lifecycle_events_published(new_session, config, platform, store):
    session, _ = new_session()
    q = event_bus.subscribe(session.tag)
    checkpoint_tick(session, [], now_us=config.interval_us)
    crash(session)
    recover(config, store, platform=platform, now_us=2 * config.interval_us)
    stages = [e["stage"] for e in event_bus.drain(q)]
    assert stages == ["checkpoint", "crash", "checkpoint", "recover"]
    assert event_bus.get_status(session.tag)["recover"]["index"] == 2
    event_bus.clear(session.tag)


def test_recovery_checkpoint_keeps_document_hash(honest_chain, config, platform, store):
    crash(honest_chain)
    _, cp = recover(config, store, platform=platform, now_us=6 * config.interval_us)
    assert cp.payload.content_hash == crypto.hash(b"draft 5")
    assert cp.payload.content_hash != crypto.hash(b"")


def _corrupt_latest(store):
    raw = bytearray(store.latest_path.read_bytes())
    raw[-1] ^= 1
    store.latest_path.write_bytes(bytes(raw))


def _buffer_three_then_corrupt(session, config, platform, store):
    go_offline(session)
    for i in range(6, 9):
        checkpoint_tick(session, [], f"offline {i}".encode(), now_us=i * config.interval_us)
    crash(session)
    _corrupt_latest(store)
    with pytest.raises(SealCorrupted):
        recover(config, store, platform=platform, now_us=10 * config.interval_us)


def test_cold_restart_during_partition_salvages_spool(honest_chain, config, platform, store, tmp_path):
    _buffer_three_then_corrupt(honest_chain, config, platform, store)
    fresh = cold_restart(config, b"second-verifier-nonce-0123456789", platform=platform, store=store,
                         chain_path=tmp_path / "cold.bin", now_us=10 * config.interval_us,
                         previous_chain=honest_chain.chain_path)
    assert fresh.salvage.salvaged == [6, 7, 8]
    assert fresh.salvage.lost == []
    assert store.spool_entries() == []

    f = codec.read_chain_file(honest_chain.chain_path)
    assert [c.index for c in f.checkpoints] == list(range(1, 9))
    assert [c.payload.marker.kind for c in f.checkpoints[5:]] == [MarkerKind.OFFLINE_BUFFERED] * 3
    report = _verify(platform, honest_chain.chain_path)
    assert report.verdict == Verdict.VALID_WITH_GAPS
    assert [g.index for g in report.gaps] == [6, 7, 8]


def test_cold_restart_stops_salvage_at_forged_entry(honest_chain, config, platform, store, tmp_path):
    _buffer_three_then_corrupt(honest_chain, config, platform, store)
    entries = store.spool_entries()
    store.spool_clear()
    for index, bundle in entries:
        if index == 7:
            cp, leaves, refresh = codec.parse_bundle(bundle)
            bundle = codec.checkpoint_bundle(cp.model_copy(update={"signature": bytes(64)}), leaves, refresh)
        store.spool_append(index, bundle)

    fresh = cold_restart(config, b"second-verifier-nonce-0123456789", platform=platform, store=store,
                         chain_path=tmp_path / "cold.bin", now_us=10 * config.interval_us,
                         previous_chain=honest_chain.chain_path)
    assert fresh.salvage.salvaged == [6]
    assert fresh.salvage.lost == [7, 8]
    assert event_bus.get_status(fresh.tag)["cold_restart"]["lost"] == 2
    event_bus.clear(fresh.tag)
    f = codec.read_chain_file(honest_chain.chain_path)
    assert [c.index for c in f.checkpoints] == list(range(1, 7))
    assert _verify(platform, honest_chain.chain_path).verdict == Verdict.VALID_WITH_GAPS


def test_cold_restart_without_previous_chain_reports_loss(honest_chain, config, platform, store, tmp_path):
    _buffer_three_then_corrupt(honest_chain, config, platform, store)
    fresh = cold_restart(config, b"second-verifier-nonce-0123456789", platform=platform, store=store,
                         chain_path=tmp_path / "cold.bin", now_us=10 * config.interval_us)
    assert fresh.salvage.lost == [6, 7, 8]
    assert len(codec.read_chain_file(honest_chain.chain_path).checkpoints) == 5


@pytest.mark.slow
def test_every_rollback_injection_refused(honest_chain, config, platform, store):
    crash(honest_chain)
    latest = store.latest_path.read_bytes()
    stale = store.retained_blobs()
    rng = np.random.default_rng(13)
    for _ in range(1000):
        store.restore_blob(stale[int(rng.integers(len(stale)))])
        with pytest.raises(RollbackDetected):
            recover(config, store, platform=platform, now_us=10 * config.interval_us)
    store.restore_blob(latest)
    _, cp = recover(config, store, platform=platform, now_us=10 * config.interval_us)
    assert cp.index == 6
