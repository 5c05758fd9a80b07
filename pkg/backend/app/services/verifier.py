"""
Standalone evidence chain verifier.

Header checks (quote, measurement, nonce, header signature), then a sequential
linkage pass (h_0, indices, chain hashes, SWF seed continuity, marker/time
consistency), then a per-checkpoint pass (signature, CDCE tag, SWF per mode,
leaf archive, refresh quotes) that can run on a thread pool.

Failed checks end up in the report; only unparseable input raises.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
from pydantic import ValidationError

from ..core import crypto_core as crypto
from ..core.errors import ChallengeMismatch, ParseError
from ..core.timing import Timer
from ..models.evidence import Checkpoint, EvidenceChainFile, MarkerKind, SwfParams
from ..models.verification import (
    CheckpointState,
    CheckpointStatus,
    FidelityMode,
    FreshnessReason,
    FreshnessResult,
    GapEntry,
    Verdict,
    VerificationMode,
    VerificationPolicy,
    VerificationReport,
)
from . import codec
from .evidence_chain import config_measurement
from .merkle import MerkleTree
from .swf import challenge_seed, seed_input_digest, swf_init, swf_open, swf_verify_full, swf_verify_sampled

logger = logging.getLogger(__name__)


# ---------------- fidelity ----------------
def fidelity(mode: FidelityMode, policy: VerificationPolicy, delta_t: float = 0.0) -> float:
    if delta_t < 0:
        raise ValueError("delta_t must be >= 0")
    if mode == FidelityMode.FULL:
        return 1.0
    if mode == FidelityMode.MINIMAL:
        return policy.beta
    return min(1.0, max(policy.beta, 1.0 - policy.alpha * delta_t / policy.t_max_s))


# ---------------- header ----------------
def _header_failures(
    f: EvidenceChainFile, policy: VerificationPolicy, verifier_nonce: bytes, root_public_key: bytes
) -> List[str]:
    h = f.header
    out = []
    if not crypto.verify_quote(h.quote, root_public_key):
        out.append("quote not signed by the platform root")
    if h.quote.bound_public_key != h.public_key:
        out.append("quote binds a different public key")
    if h.quote.nonce != verifier_nonce or h.verifier_nonce != verifier_nonce:
        out.append("nonce mismatch")
    try:
        expected = config_measurement(h.session_config())
    except ValidationError:
        expected = None
    if expected is None or h.quote.enclave_measurement != expected:
        out.append("measurement does not match the header configuration")
    if policy.expected_measurement is not None and h.quote.enclave_measurement != policy.expected_measurement:
        out.append("measurement differs from the expected pipeline")
    if not crypto.verify_signature(h.public_key, codec.header_signing_message(h), h.header_signature):
        out.append("header signature invalid")
    return out


# ---------------- linkage pass ----------------
def _linkage(
    f: EvidenceChainFile, policy: VerificationPolicy, verifier_nonce: bytes, statuses: List[CheckpointStatus]
) -> Tuple[Optional[int], Dict[int, Tuple[bytes, bytes]]]:
    """Returns the first failing position (or None) and per-index (prev_hash, prev_output)."""
    h = f.header
    sid = h.session_id
    interval_s = h.interval_us / 1e6
    prev_h = codec.genesis_hash(sid, verifier_nonce)
    try:
        prev_out = swf_init(verifier_nonce, sid)
    except ValueError:
        prev_out = b"\x00" * 32
    prev_time: Optional[int] = None
    context: Dict[int, Tuple[bytes, bytes]] = {}
    min_work_s = h.swf_params.chain_length / policy.max_hash_rate

    for pos, cp in enumerate(f.checkpoints):
        st = statuses[pos]
        p = cp.payload
        fail = st.failures
        if p.session_id != sid:
            fail.append("session id differs from header")
        if p.index != pos + 1:
            fail.append(f"index {p.index}, expected {pos + 1}")
        if codec.chain_hash(prev_h, p) != cp.chain_hash:
            fail.append("chain hash mismatch")
        if p.swf.checkpoint_index != p.index:
            fail.append("swf proof bound to another index")
        if p.swf.seed_input_digest != seed_input_digest(prev_out, p.index, sid):
            fail.append("swf chain broken")

        if prev_time is not None:
            dt_us = p.local_time_us - prev_time
            if dt_us <= 0:
                fail.append("local time not increasing")
            else:
                dt = dt_us / 1e6
                if p.marker.kind == MarkerKind.NORMAL and dt > interval_s + policy.gap_tolerance_s:
                    fail.append(f"{dt:.1f}s gap without a marker")
                if p.marker.kind == MarkerKind.RECOVERY and p.marker.gap_us > dt_us:
                    fail.append("recovery gap longer than elapsed local time")
                if p.marker.kind != MarkerKind.RECOVERY and dt < min_work_s:
                    st.warnings.append("clock anomaly: interval shorter than the SWF work")

        if fail:
            st.state = CheckpointState.INVALID
            return pos, context
        context[p.index] = (prev_h, prev_out)
        prev_h, prev_out, prev_time = cp.chain_hash, p.swf.output, p.local_time_us
    return None, context


# ---------------- per-checkpoint pass ----------------
def _sampled_positions(f: EvidenceChainFile, policy: VerificationPolicy, verifier_nonce: bytes) -> Set[int]:
    n = len(f.checkpoints)
    if n == 0:
        return set()
    chosen = {0, n - 1}
    for pos, cp in enumerate(f.checkpoints):
        if cp.payload.marker.kind == MarkerKind.RECOVERY:
            chosen.update(p for p in (pos - 1, pos, pos + 1) if 0 <= p < n)
    seed = crypto.hash(f.checkpoints[-1].chain_hash + verifier_nonce)
    rng = np.random.default_rng(int.from_bytes(seed[:8], "big"))
    want = math.ceil(policy.checkpoint_sample_fraction * n)
    if want:
        chosen.update(int(i) for i in rng.choice(n, size=min(want, n), replace=False))
    return chosen


def _archive_ok(f: EvidenceChainFile, cp: Checkpoint, params: SwfParams) -> Tuple[bool, Optional[MerkleTree]]:
    entry = f.leaf_archive.get(cp.index)
    if entry is None or len(entry.leaves) != params.leaf_count:
        return False, None
    tree = MerkleTree(entry.leaves)
    ok = tree.root == cp.payload.swf.merkle_root and entry.leaves[-1] == cp.payload.swf.output
    return ok, tree


def _check_checkpoint(
    f: EvidenceChainFile,
    cp: Checkpoint,
    st: CheckpointStatus,
    ctx: Tuple[bytes, bytes],
    policy: VerificationPolicy,
    verifier_nonce: bytes,
    sampled: bool,
) -> None:
    h = f.header
    params = h.swf_params
    prev_h, prev_out = ctx
    if not crypto.verify_signature(h.public_key, codec.checkpoint_signing_message(cp.chain_hash), cp.signature):
        st.failures.append("signature invalid")
    if codec.cdce_tag(cp.payload) != cp.cdce_tag:
        st.failures.append("cdce tag mismatch")

    proof = cp.payload.swf
    if policy.mode == VerificationMode.LINKAGE_ONLY:
        st.swf_check = "linkage"
    else:
        archive_ok, tree = _archive_ok(f, cp, params)
        if not archive_ok:
            st.failures.append("leaf archive does not match the committed root")
        if policy.mode == VerificationMode.FULL_RECOMPUTE:
            st.swf_check = "full"
            if not swf_verify_full(params, proof, prev_out, cp.index, h.session_id):
                st.failures.append("swf recomputation mismatch")
        elif sampled and tree is not None:
            st.swf_check = "sampled"
            k = min(policy.sample_count or params.sample_count, params.segment_count)
            seed = challenge_seed(proof.merkle_root, prev_h, verifier_nonce)
            try:
                ok = swf_verify_sampled(params, proof, swf_open(tree, proof, seed, k), seed, k)
            except ChallengeMismatch:
                ok = False
            if not ok:
                st.failures.append("sampled swf openings failed")
        else:
            st.swf_check = "archive"

    threshold = policy.entropy_threshold
    b = cp.payload.behavioral
    if cp.payload.marker.kind != MarkerKind.RECOVERY and b.shannon_entropy_bits < threshold:
        st.warnings.append(f"entropy {b.shannon_entropy_bits:.2f} bits below {threshold}")


def _refresh_failures(f: EvidenceChainFile, root_public_key: bytes) -> Dict[int, str]:
    by_index = {cp.index: cp for cp in f.checkpoints}
    out = {}
    for rq in f.refresh_quotes:
        cp = by_index.get(rq.at_index)
        q = rq.quote
        if (
            cp is None
            or not crypto.verify_quote(q, root_public_key)
            or q.bound_public_key != f.header.public_key
            or q.enclave_measurement != f.header.quote.enclave_measurement
            or q.nonce != cp.chain_hash
        ):
            out[rq.at_index] = "refresh quote invalid"
    return out


# ---------------- fidelity / gaps ----------------
def _score(f: EvidenceChainFile, policy: VerificationPolicy, statuses: List[CheckpointStatus]) -> Tuple[List[GapEntry], float]:
    interval_us = f.header.interval_us
    gaps: List[GapEntry] = []
    weights, scores = [], []
    prev_time = None
    last_normal = None
    for cp, st in zip(f.checkpoints, statuses):
        p = cp.payload
        dt_us = interval_us if prev_time is None else max(0, p.local_time_us - prev_time)
        kind = p.marker.kind
        st.marker = kind
        if not f.header.tee_available:
            st.fidelity = fidelity(FidelityMode.MINIMAL, policy)
        elif kind == MarkerKind.NORMAL:
            st.fidelity = fidelity(FidelityMode.FULL, policy)
        elif kind == MarkerKind.RECOVERY:
            st.fidelity = fidelity(FidelityMode.DEGRADED, policy, p.marker.gap_us / 1e6)
        else:
            base = last_normal if last_normal is not None else p.local_time_us - interval_us
            st.fidelity = fidelity(FidelityMode.DEGRADED, policy, max(0, p.local_time_us - base) / 1e6)

        if kind == MarkerKind.RECOVERY:
            gaps.append(GapEntry(index=p.index, duration_s=p.marker.gap_us / 1e6, marker=kind))
        elif kind == MarkerKind.OFFLINE_BUFFERED:
            gaps.append(GapEntry(index=p.index, duration_s=dt_us / 1e6, marker=kind))
        else:
            last_normal = p.local_time_us
        weights.append(dt_us)
        scores.append(st.fidelity)
        prev_time = p.local_time_us

    total = float(sum(weights))
    aggregate = float(np.dot(weights, scores) / total) if total > 0 else (float(np.mean(scores)) if scores else 1.0)
    return gaps, aggregate


# ---------------- entry points ----------------
def verify_chain(
    file: EvidenceChainFile,
    policy: VerificationPolicy,
    verifier_nonce: bytes,
    *,
    root_public_key: bytes,
) -> VerificationReport:
    with Timer("verify_chain", quiet=True) as timer:
        report = _verify(file, policy, verifier_nonce, root_public_key)
    report.elapsed_s = timer.elapsed
    level = logging.WARNING if report.verdict == Verdict.INVALID else logging.INFO
    logger.log(
        level,
        "[verifier] %s: %s over %d checkpoints (%s mode, %.3fs)%s",
        report.session_id[:8], report.verdict.value, report.checkpoint_count, policy.mode.value, timer.elapsed,
        f" - {report.failure_reason}" if report.failure_reason else "",
    )
    return report


def _verify(
    f: EvidenceChainFile, policy: VerificationPolicy, verifier_nonce: bytes, root_public_key: bytes
) -> VerificationReport:
    statuses = [CheckpointStatus(index=cp.index, state=CheckpointState.VALID) for cp in f.checkpoints]
    report = VerificationReport(
        verdict=Verdict.VALID,
        mode=policy.mode,
        session_id=f.header.session_id.hex(),
        checkpoint_count=len(f.checkpoints),
        statuses=statuses,
    )

    report.header_failures = _header_failures(f, policy, verifier_nonce, root_public_key)
    if report.header_failures:
        for st in statuses:
            st.state = CheckpointState.UNREACHABLE
        report.verdict = Verdict.INVALID
        report.failure_reason = report.header_failures[0]
        return report

    fail_pos, context = _linkage(f, policy, verifier_nonce, statuses)
    reachable = len(f.checkpoints) if fail_pos is None else fail_pos

    sampled = _sampled_positions(f, policy, verifier_nonce) if policy.mode == VerificationMode.SAMPLED else set()
    jobs = [
        (f, f.checkpoints[pos], statuses[pos], context[f.checkpoints[pos].index], policy, verifier_nonce, pos in sampled)
        for pos in range(reachable)
    ]
    if policy.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=policy.workers) as pool:
            list(pool.map(lambda a: _check_checkpoint(*a), jobs))
    else:
        for a in jobs:
            _check_checkpoint(*a)

    for index, reason in _refresh_failures(f, root_public_key).items():
        if index <= reachable:
            statuses[index - 1].failures.append(reason)

    expected_quotes = [cp.index for cp in f.checkpoints if cp.index % f.header.quote_every_n == 0]
    present = {rq.at_index for rq in f.refresh_quotes}
    if any(i not in present for i in expected_quotes):
        report.warnings.append("refresh quotes missing at the configured cadence")

    for pos in range(reachable):
        if statuses[pos].failures:
            fail_pos = pos
            break
    if fail_pos is not None:
        statuses[fail_pos].state = CheckpointState.INVALID
        for st in statuses[fail_pos + 1:]:
            st.state = CheckpointState.UNREACHABLE
            st.failures.clear()
            st.warnings.clear()
        report.verdict = Verdict.INVALID
        report.failure_index = statuses[fail_pos].index
        report.failure_reason = statuses[fail_pos].failures[0]
        return report

    report.gaps, report.fidelity_aggregate = _score(f, policy, statuses)
    report.warnings.extend(f"checkpoint {st.index}: {w}" for st in statuses for w in st.warnings)
    report.verdict = Verdict.VALID_WITH_GAPS if report.gaps else Verdict.VALID
    return report


def verify_chain_bytes(
    data: bytes, policy: VerificationPolicy, verifier_nonce: bytes, *, root_public_key: bytes
) -> VerificationReport:
    """Parse and verify; malformed input yields an Invalid report instead of raising."""
    try:
        f = codec.parse_chain_file(data)
    except ParseError as e:
        return VerificationReport(verdict=Verdict.INVALID, mode=policy.mode, failure_reason=f"parse error: {e}")
    return verify_chain(f, policy, verifier_nonce, root_public_key=root_public_key)


def check_freshness(
    file: EvidenceChainFile, verifier_nonce: bytes, entropy_threshold: Optional[float] = None
) -> FreshnessResult:
    h = file.header
    if h.verifier_nonce != verifier_nonce or h.quote.nonce != verifier_nonce:
        return FreshnessResult(fresh=False, reason=FreshnessReason.NONCE_MISMATCH, detail="header nonce differs")
    try:
        prev_out = swf_init(verifier_nonce, h.session_id)
    except ValueError as e:
        return FreshnessResult(fresh=False, reason=FreshnessReason.NONCE_MISMATCH, detail=str(e))

    threshold = h.entropy_threshold if entropy_threshold is None else entropy_threshold
    for cp in file.checkpoints:
        p = cp.payload
        if p.swf.seed_input_digest != seed_input_digest(prev_out, p.index, h.session_id):
            return FreshnessResult(fresh=False, reason=FreshnessReason.SWF_BREAK, detail=f"checkpoint {p.index}")
        prev_out = p.swf.output
        b = p.behavioral
        if p.marker.kind != MarkerKind.RECOVERY and b.keystroke_count >= 2 and b.shannon_entropy_bits < threshold:
            return FreshnessResult(
                fresh=False, reason=FreshnessReason.LOW_ENTROPY,
                detail=f"checkpoint {p.index}: {b.shannon_entropy_bits:.2f} bits",
            )
    return FreshnessResult(fresh=True, reason=FreshnessReason.OK)
