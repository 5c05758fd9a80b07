from pathlib import Path

import numpy as np
import pytest

from backend.app.core.errors import ConfigInvalid
from backend.app.models.dependability import CtmcParams
from backend.app.models.evidence import KeyClass, MarkerKind
from backend.app.models.simulation import (
    FaultEvent,
    FaultKind,
    FaultMode,
    FaultOutcome,
    FaultProfile,
    TypingModel,
)
from backend.app.models.verification import Verdict, VerificationMode, VerificationPolicy
from backend.app.services.session_sim import bench_recovery, build_schedule, generate_keystrokes, run_session
from backend.app.services.verifier import verify_chain


def _scripted(*events):
    return FaultProfile(mode=FaultMode.SCRIPTED, events=[FaultEvent(time_s=t, kind=k) for t, k in events])


STORMY = FaultProfile(
    mode=FaultMode.STOCHASTIC,
    rates=CtmcParams(lambda_c=60.0, lambda_p=30.0, mu_p=360.0, p_f=0.2),
    cold_restart_delay_s=2.0,
)


@pytest.fixture
def fast_config(config):
    return config.model_copy(update={"checkpoint_interval_s": 5.0})


def _run(tmp_path, platform, config, profile, duration_s, seed=1, name="run"):
    return run_session(config, TypingModel(session_duration_s=duration_s), profile, seed,
                       platform=platform, workdir=tmp_path / name)


def _reports(run, platform, mode=VerificationMode.FULL_RECOMPUTE):
    return [
        verify_chain(chain, VerificationPolicy(mode=mode), nonce, root_public_key=platform.public_key)
        for chain, nonce in zip(run.chains, run.verifier_nonces)
    ]


def _markers(run, kind):
    return sum(1 for c in run.chains for cp in c.checkpoints if cp.payload.marker.kind == kind)


# ---------------- typing and schedules ----------------
def test_generated_keystrokes_are_ordered_and_bounded():
    rng = np.random.default_rng(5)
    keys = generate_keystrokes(TypingModel(), rng, 600_000_000)
    ts = keys.timestamps
    assert np.all(np.diff(ts) > 0)
    assert ts[-1] <= 600_000_000
    # about 600 s / ~102 ms mean interval
    assert 5000 < len(keys) < 7000
    edits = np.mean(keys.classes == int(KeyClass.EDIT))
    assert 0.06 < edits < 0.10
    assert keys.index_before(int(ts[10])) == 10
    assert [e.sequence_number for e in keys.events(3, 6)] == [4, 5, 6]


def test_scripted_fault_past_end_rejected():
    profile = _scripted((500.0, FaultKind.CRASH))
    with pytest.raises(ConfigInvalid):
        build_schedule(profile, 300.0, np.random.default_rng(0))


def test_stochastic_partitions_do_not_overlap():
    events = build_schedule(STORMY, 3600.0, np.random.default_rng(3))
    assert [e.time_s for e in events] == sorted(e.time_s for e in events)
    kinds = [e.kind for e in events if e.kind in (FaultKind.PARTITION_START, FaultKind.PARTITION_END)]
    assert kinds
    for i, k in enumerate(kinds):
        assert k == (FaultKind.PARTITION_START if i % 2 == 0 else FaultKind.PARTITION_END)
    assert any(e.kind == FaultKind.CRASH for e in events)


# ---------------- scripted sessions ----------------
def test_fault_free_session(tmp_path, platform, config):
    run = _run(tmp_path, platform, config, FaultProfile(), 300.0)
    assert len(run.chains) == 1
    assert len(run.chains[0].checkpoints) == 10
    assert run.fault_log == []
    assert _reports(run, platform)[0].verdict == Verdict.VALID
    assert run.chains[0].checkpoints[0].payload.behavioral.keystroke_count > 0


def test_zero_duration_session(tmp_path, platform, config):
    run = _run(tmp_path, platform, config, FaultProfile(), 0.0)
    assert run.chains[0].checkpoints == []
    assert _reports(run, platform)[0].verdict == Verdict.VALID


def test_scripted_crash_recovers_with_marker(tmp_path, platform, config):
    run = _run(tmp_path, platform, config, _scripted((95.0, FaultKind.CRASH)), 300.0)
    [record] = run.fault_log
    assert record.outcome == FaultOutcome.RECOVERED
    assert record.marker_index == 4
    assert record.lost_evidence_s == pytest.approx(5.0)
    assert record.downtime_s == pytest.approx(1.0)
    assert _markers(run, MarkerKind.RECOVERY) == 1
    assert len(run.chains[0].checkpoints) == 10
    assert run.lifecycle_counts["crash"] == 1
    assert run.lifecycle_counts["recover"] == 1
    report = _reports(run, platform)[0]
    assert report.verdict == Verdict.VALID_WITH_GAPS
    assert [g.index for g in report.gaps] == [4]


def test_stacked_crash_extends_downtime(tmp_path, platform, config):
    run = _run(tmp_path, platform, config, _scripted((95.0, FaultKind.CRASH), (95.5, FaultKind.CRASH)), 300.0)
    assert [r.outcome for r in run.fault_log] == [FaultOutcome.RECOVERED, FaultOutcome.STACKED]
    assert run.fault_log[0].downtime_s == pytest.approx(1.5)
    assert _markers(run, MarkerKind.RECOVERY) == 1


def test_seal_corruption_forces_cold_restart(tmp_path, platform, config):
    run = _run(tmp_path, platform, config, _scripted((95.0, FaultKind.SEAL_CORRUPT)), 300.0)
    [record] = run.fault_log
    assert record.outcome == FaultOutcome.COLD_RESTART
    assert record.downtime_s == pytest.approx(10.0)
    assert len(run.chains) == 2
    assert run.verifier_nonces[0] != run.verifier_nonces[1]
    assert len(run.chains[0].checkpoints) == 3
    assert len(run.chains[1].checkpoints) == 6
    assert run.chains[0].header.session_id != run.chains[1].header.session_id
    assert [r.verdict for r in _reports(run, platform)] == [Verdict.VALID, Verdict.VALID]


def test_partition_buffers_and_flushes(tmp_path, platform, config):
    profile = _scripted((1000.0, FaultKind.PARTITION_START), (2000.0, FaultKind.PARTITION_END))
    run = _run(tmp_path, platform, config, profile, 2400.0)
    assert len(run.chains[0].checkpoints) == 80
    assert _markers(run, MarkerKind.OFFLINE_BUFFERED) == 34
    start, end = run.fault_log
    assert start.marker_index == 34
    assert end.downtime_s == pytest.approx(1000.0)
    report = _reports(run, platform)[0]
    assert report.verdict == Verdict.VALID_WITH_GAPS
    assert len(report.gaps) == 34


def test_crash_during_partition(tmp_path, platform, config):
    profile = _scripted(
        (200.0, FaultKind.PARTITION_START), (305.0, FaultKind.CRASH), (400.0, FaultKind.PARTITION_END)
    )
    run = _run(tmp_path, platform, config, profile, 600.0)
    assert [r.outcome for r in run.crash_records] == [FaultOutcome.RECOVERED]
    assert _markers(run, MarkerKind.RECOVERY) == 1
    assert _reports(run, platform)[0].verdict == Verdict.VALID_WITH_GAPS


def test_seal_corruption_during_partition_keeps_buffered_evidence(tmp_path, platform, config):
    profile = _scripted(
        (100.0, FaultKind.PARTITION_START), (200.0, FaultKind.SEAL_CORRUPT), (400.0, FaultKind.PARTITION_END)
    )
    run = _run(tmp_path, platform, config, profile, 600.0)
    [record] = run.crash_records
    assert record.outcome == FaultOutcome.COLD_RESTART
    assert record.lost_buffered == 0
    old = run.chains[0]
    assert [cp.index for cp in old.checkpoints] == [1, 2, 3, 4, 5, 6]
    assert [cp.payload.marker.kind for cp in old.checkpoints[3:]] == [MarkerKind.OFFLINE_BUFFERED] * 3
    reports = _reports(run, platform)
    assert reports[0].verdict == Verdict.VALID_WITH_GAPS
    assert all(r.verdict != Verdict.INVALID for r in reports)


# ---------------- adversarial placement ----------------
@pytest.mark.parametrize("n", [1, 2, 10])
def test_adversarial_crashes_lose_almost_a_full_interval(tmp_path, platform, config, n):
    profile = FaultProfile(mode=FaultMode.ADVERSARIAL_WORST_CASE, n_crashes=n)
    run = _run(tmp_path, platform, config, profile, 600.0)
    assert len(run.fault_log) == n
    assert all(r.outcome == FaultOutcome.RECOVERED for r in run.fault_log)
    assert sum(r.lost_evidence_s for r in run.fault_log) == pytest.approx(n * 29.5)
    assert _markers(run, MarkerKind.RECOVERY) == n
    assert _reports(run, platform)[0].verdict == Verdict.VALID_WITH_GAPS


def test_too_many_adversarial_crashes(tmp_path, platform, config):
    profile = FaultProfile(mode=FaultMode.ADVERSARIAL_WORST_CASE, n_crashes=50)
    with pytest.raises(ConfigInvalid):
        _run(tmp_path, platform, config, profile, 600.0)


# ---------------- determinism ----------------
def test_same_seed_same_chains(tmp_path, platform, fast_config):
    a = _run(tmp_path, platform, fast_config, STORMY, 120.0, seed=9, name="a")
    b = _run(tmp_path, platform, fast_config, STORMY, 120.0, seed=9, name="b")
    c = _run(tmp_path, platform, fast_config, STORMY, 120.0, seed=10, name="c")
    assert [Path(p).read_bytes() for p in a.chain_paths] == [Path(p).read_bytes() for p in b.chain_paths]
    assert a.fault_log == b.fault_log
    assert Path(a.chain_paths[0]).read_bytes() != Path(c.chain_paths[0]).read_bytes()


# ---------------- recovery latency ----------------
def test_bench_recovery_smoke(tmp_path, platform, config):
    bench = bench_recovery(config, 3, platform=platform, workdir=tmp_path)
    assert bench.repetitions == 3
    assert bench.sealed.samples == bench.cold.samples == 3
    assert 0 < bench.sealed.min_ms <= bench.sealed.mean_ms <= bench.sealed.max_ms
    assert bench.memory_cost == config.swf.mh.memory_cost
    with pytest.raises(ConfigInvalid):
        bench_recovery(config, 0, platform=platform, workdir=tmp_path)


# ---------------- acceptance ----------------
@pytest.mark.slow
def test_random_fault_schedules_match_ground_truth(tmp_path, platform, fast_config):
    for seed in range(200):
        run = _run(tmp_path, platform, fast_config, STORMY, 60.0, seed=seed, name=f"s{seed}")
        reports = _reports(run, platform)
        assert all(r.verdict != Verdict.INVALID for r in reports), (seed, [r.failure_reason for r in reports])

        outcomes = [r.outcome for r in run.crash_records]
        assert outcomes.count(FaultOutcome.RECOVERED) == _markers(run, MarkerKind.RECOVERY), seed
        assert outcomes.count(FaultOutcome.COLD_RESTART) == len(run.chains) - 1, seed
        for r in run.crash_records:
            if r.outcome != FaultOutcome.STACKED:
                assert r.lost_evidence_s <= fast_config.checkpoint_interval_s + 1e-9, (seed, r)


@pytest.mark.slow
def test_four_hour_session(tmp_path, platform, config):
    run = _run(tmp_path, platform, config, FaultProfile(), 14_400.0)
    chain = run.chains[0]
    assert len(chain.checkpoints) == 480
    assert np.mean(chain.record_sizes) <= 2048
    report = _reports(run, platform, VerificationMode.SAMPLED)[0]
    assert report.verdict == Verdict.VALID
    assert report.elapsed_s < 1.0
