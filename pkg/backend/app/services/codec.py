"""
Canonical byte layouts for checkpoints and evidence chain files.

All integers are big-endian. See BACKEND_SETUP.md for the full layout.

Checkpoint record:
    payload_len u32 | payload body | marker (tag u8 | gap_us u64) |
    cdce_tag 32 | chain_hash 32 | signature 64
Payload body:
    b"CKP1" | session_id 16 | index u64 | content_hash 32 |
    behavioral_len u32 | behavioral | swf_len u32 | swf | local_time_us u64
Chain file:
    b"EVCHAIN\\x00" | version u16 | header_len u32 | header body | header_signature 64
    then frames: kind u8 | len u32 | body
        1 = checkpoint record, 2 = leaf archive entry, 3 = refresh quote
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from ..core import crypto_core as crypto
from ..core.errors import ParseError, PersistenceFailure
from ..models.evidence import (
    BehavioralFeatures,
    ChainHeader,
    Checkpoint,
    CheckpointPayload,
    EvidenceChainFile,
    LeafArchiveEntry,
    Marker,
    MarkerKind,
    RefreshQuote,
    SessionConfig,
    SwfParams,
    SwfProof,
)
from ..models.platform import AttestationQuote, MemoryHardParams

CHAIN_MAGIC = b"EVCHAIN\x00"
CHAIN_VERSION = 1
PAYLOAD_MAGIC = b"CKP1"

FRAME_CHECKPOINT = 1
FRAME_LEAVES = 2
FRAME_QUOTE = 3

GENESIS_TAG = b"genesis"
CDCE_KEY_INFO = b"cdce-key-v1"
CHECKPOINT_SIG_DOMAIN = b"attestchain-checkpoint"
HEADER_SIG_DOMAIN = b"attestchain-header"

MAX_HEADER_LEN = 1 << 16


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ParseError(f"{self.what}: truncated at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u8(self) -> int:
        return self.unpack(">B")[0]

    def u16(self) -> int:
        return self.unpack(">H")[0]

    def u32(self) -> int:
        return self.unpack(">I")[0]

    def u64(self) -> int:
        return self.unpack(">Q")[0]

    def flag(self) -> bool:
        v = self.u8()
        if v not in (0, 1):
            raise ParseError(f"{self.what}: flag byte {v}")
        return bool(v)

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def done(self) -> None:
        if self.remaining:
            raise ParseError(f"{self.what}: {self.remaining} trailing bytes")


def _build(model, what: str, **fields):
    try:
        return model(**fields)
    except ValidationError as e:
        raise ParseError(f"{what}: {e.errors()[0]['msg']}") from e


# ---------------- behavioral / SWF ----------------
def encode_behavioral(f: BehavioralFeatures) -> bytes:
    head = struct.pack(
        ">IddddIBH",
        f.keystroke_count,
        f.shannon_entropy_bits,
        f.mean_iki_ms,
        f.pause_rate,
        f.mean_burst_length,
        f.max_burst_length,
        1,
        len(f.iki_histogram),
    )
    bins = b"".join(struct.pack(">HI", b, c) for b, c in sorted(f.iki_histogram.items()))
    return head + bins


def decode_behavioral(data: bytes) -> BehavioralFeatures:
    r = _Reader(data, "behavioral")
    count, bits, mean, pause, mean_burst, max_burst, quantized, nbins = r.unpack(">IddddIBH")
    if quantized != 1:
        raise ParseError("behavioral: quantized flag must be set")
    hist: Dict[int, int] = {}
    prev = -1
    for _ in range(nbins):
        b, c = r.unpack(">HI")
        if b <= prev or c == 0:
            raise ParseError("behavioral: histogram bins must be ascending and nonzero")
        hist[b] = c
        prev = b
    r.done()
    return _build(
        BehavioralFeatures,
        "behavioral",
        keystroke_count=count,
        iki_histogram=hist,
        shannon_entropy_bits=bits,
        mean_iki_ms=mean,
        pause_rate=pause,
        mean_burst_length=mean_burst,
        max_burst_length=max_burst,
    )


def encode_mh(mh: MemoryHardParams) -> bytes:
    return struct.pack(">IIBB", mh.memory_kib, mh.time_cost, mh.parallelism, mh.output_len)


def _decode_mh(r: _Reader) -> MemoryHardParams:
    kib, t, lanes, outlen = r.unpack(">IIBB")
    return _build(MemoryHardParams, "memory-hard params", memory_cost=kib * 1024, time_cost=t,
                  parallelism=lanes, output_len=outlen)


def encode_swf_proof(p: SwfProof) -> bytes:
    return (
        struct.pack(">Q", p.checkpoint_index)
        + p.seed_input_digest
        + p.output
        + p.merkle_root
        + struct.pack(">Q", p.chain_length)
        + encode_mh(p.mh_params_echo)
    )


def decode_swf_proof(data: bytes) -> SwfProof:
    r = _Reader(data, "swf proof")
    idx = r.u64()
    seed_digest, output, root = r.take(32), r.take(32), r.take(32)
    length = r.u64()
    mh = _decode_mh(r)
    r.done()
    return _build(SwfProof, "swf proof", checkpoint_index=idx, seed_input_digest=seed_digest, output=output,
                  merkle_root=root, chain_length=length, mh_params_echo=mh)


def encode_swf_params(p: SwfParams) -> bytes:
    return encode_mh(p.mh) + struct.pack(">QQI", p.chain_length, p.merkle_stride, p.sample_count)


def encode_session_config(c: SessionConfig) -> bytes:
    """Canonical configuration bytes bound into the enclave measurement."""
    return encode_swf_params(c.swf) + struct.pack(
        ">QdBIB", c.interval_us, c.entropy_threshold, c.tier, c.quote_every_n, 1 if c.tee_available else 0
    )


def _decode_swf_params(r: _Reader) -> SwfParams:
    mh = _decode_mh(r)
    length, stride, k = r.unpack(">QQI")
    return _build(SwfParams, "swf params", mh=mh, chain_length=length, merkle_stride=stride, sample_count=k)


# ---------------- checkpoints ----------------
def marker_bytes(marker: Marker) -> bytes:
    return struct.pack(">BQ", int(marker.kind), marker.gap_us)


def encode_payload_body(p: CheckpointPayload) -> bytes:
    behav = encode_behavioral(p.behavioral)
    swf = encode_swf_proof(p.swf)
    return b"".join([
        PAYLOAD_MAGIC,
        p.session_id,
        struct.pack(">Q", p.index),
        p.content_hash,
        struct.pack(">I", len(behav)), behav,
        struct.pack(">I", len(swf)), swf,
        struct.pack(">Q", p.local_time_us),
    ])


def genesis_hash(session_id: bytes, verifier_nonce: bytes) -> bytes:
    return crypto.hash(GENESIS_TAG + session_id + verifier_nonce)


def chain_hash(prev_hash: bytes, payload: CheckpointPayload) -> bytes:
    return crypto.hash(prev_hash + encode_payload_body(payload) + marker_bytes(payload.marker))


def checkpoint_signing_message(h: bytes) -> bytes:
    return CHECKPOINT_SIG_DOMAIN + h


def cdce_key(swf_output: bytes) -> bytes:
    return crypto.hkdf(swf_output, salt=None, info=CDCE_KEY_INFO)


def cdce_tag(payload: CheckpointPayload) -> bytes:
    behav_digest = crypto.hash(encode_behavioral(payload.behavioral))
    return crypto.mac(cdce_key(payload.swf.output), payload.content_hash + behav_digest + payload.swf.output)


def encode_checkpoint(cp: Checkpoint) -> bytes:
    body = encode_payload_body(cp.payload)
    return (
        struct.pack(">I", len(body)) + body + marker_bytes(cp.payload.marker)
        + cp.cdce_tag + cp.chain_hash + cp.signature
    )


def _decode_marker(r: _Reader) -> Marker:
    tag, gap = r.unpack(">BQ")
    try:
        kind = MarkerKind(tag)
    except ValueError as e:
        raise ParseError(f"marker: unknown kind {tag}") from e
    return _build(Marker, "marker", kind=kind, gap_us=gap)


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data, "checkpoint")
    body = r.take(r.u32())
    marker = _decode_marker(r)
    tag, h, sig = r.take(32), r.take(32), r.take(64)
    r.done()

    b = _Reader(body, "payload")
    if b.take(4) != PAYLOAD_MAGIC:
        raise ParseError("payload: bad magic")
    session_id = b.take(16)
    index = b.u64()
    content_hash = b.take(32)
    behavioral = decode_behavioral(b.take(b.u32()))
    swf = decode_swf_proof(b.take(b.u32()))
    local_time = b.u64()
    b.done()

    payload = _build(CheckpointPayload, "payload", session_id=session_id, index=index, content_hash=content_hash,
                     behavioral=behavioral, swf=swf, local_time_us=local_time, marker=marker)
    if encode_payload_body(payload) != body:
        raise ParseError(f"checkpoint {index}: non-canonical payload encoding")
    return _build(Checkpoint, "checkpoint", payload=payload, cdce_tag=tag, chain_hash=h, signature=sig)


# ---------------- quotes / header ----------------
def encode_quote(q: AttestationQuote) -> bytes:
    return (
        q.enclave_measurement + q.bound_public_key + struct.pack(">H", len(q.nonce)) + q.nonce + q.root_signature
    )


def _decode_quote(r: _Reader) -> AttestationQuote:
    m, pk = r.take(32), r.take(32)
    nonce = r.take(r.u16())
    sig = r.take(64)
    return _build(AttestationQuote, "quote", enclave_measurement=m, bound_public_key=pk, nonce=nonce,
                  root_signature=sig)


def encode_refresh_quote(rq: RefreshQuote) -> bytes:
    return struct.pack(">Q", rq.at_index) + encode_quote(rq.quote)


def decode_refresh_quote(data: bytes) -> RefreshQuote:
    r = _Reader(data, "refresh quote")
    at = r.u64()
    q = _decode_quote(r)
    r.done()
    return _build(RefreshQuote, "refresh quote", at_index=at, quote=q)


def encode_header_body(h: ChainHeader) -> bytes:
    return b"".join([
        h.session_id,
        h.public_key,
        struct.pack(">H", len(h.verifier_nonce)), h.verifier_nonce,
        struct.pack(">BBQdI", h.tier, 1 if h.tee_available else 0, h.interval_us, h.entropy_threshold, h.quote_every_n),
        encode_swf_params(h.swf_params),
        encode_quote(h.quote),
    ])


def header_prefix(h: ChainHeader) -> bytes:
    body = encode_header_body(h)
    return CHAIN_MAGIC + struct.pack(">HI", h.version, len(body)) + body


def header_signing_message(h: ChainHeader) -> bytes:
    return HEADER_SIG_DOMAIN + header_prefix(h)


def encode_header(h: ChainHeader) -> bytes:
    return header_prefix(h) + h.header_signature


def _decode_header(r: _Reader) -> ChainHeader:
    if r.take(len(CHAIN_MAGIC)) != CHAIN_MAGIC:
        raise ParseError("chain file: bad magic")
    version = r.u16()
    if version != CHAIN_VERSION:
        raise ParseError(f"chain file: unsupported version {version}")
    length = r.u32()
    if length > MAX_HEADER_LEN:
        raise ParseError("chain file: header too large")
    body = _Reader(r.take(length), "header")
    session_id, pk = body.take(16), body.take(32)
    nonce = body.take(body.u16())
    tier = body.u8()
    tee = body.flag()
    interval = body.u64()
    threshold, every_n = body.unpack(">dI")
    params = _decode_swf_params(body)
    quote = _decode_quote(body)
    body.done()
    sig = r.take(64)
    return _build(ChainHeader, "header", version=version, session_id=session_id, public_key=pk,
                  verifier_nonce=nonce, tier=tier, tee_available=tee, interval_us=interval,
                  entropy_threshold=threshold, quote_every_n=every_n,
                  swf_params=params, quote=quote, header_signature=sig)


# ---------------- frames ----------------
def frame(kind: int, body: bytes) -> bytes:
    return struct.pack(">BI", kind, len(body)) + body


def encode_leaves(index: int, leaves: Sequence[bytes]) -> bytes:
    return struct.pack(">QI", index, len(leaves)) + b"".join(leaves)


def decode_leaves(data: bytes):
    r = _Reader(data, "leaf archive")
    index, count = r.unpack(">QI")
    leaves = tuple(r.take(32) for _ in range(count))
    r.done()
    return index, leaves


def checkpoint_bundle(cp: Checkpoint, leaves: Sequence[bytes], refresh: Optional[RefreshQuote] = None) -> bytes:
    """Frames written for one checkpoint: record, leaf archive, optional refresh quote."""
    out = frame(FRAME_CHECKPOINT, encode_checkpoint(cp)) + frame(FRAME_LEAVES, encode_leaves(cp.index, leaves))
    if refresh is not None:
        out += frame(FRAME_QUOTE, encode_refresh_quote(refresh))
    return out


def parse_bundle(data: bytes) -> Tuple[Checkpoint, Tuple[bytes, ...], Optional[RefreshQuote]]:
    """Inverse of checkpoint_bundle."""
    r = _Reader(data, "checkpoint bundle")
    if r.u8() != FRAME_CHECKPOINT:
        raise ParseError("checkpoint bundle must open with a checkpoint frame")
    cp = decode_checkpoint(r.take(r.u32()))
    if r.u8() != FRAME_LEAVES:
        raise ParseError(f"checkpoint bundle {cp.index} has no leaf archive")
    index, leaves = decode_leaves(r.take(r.u32()))
    if index != cp.index:
        raise ParseError(f"leaf archive entry {index} does not follow its checkpoint {cp.index}")
    refresh = None
    if r.remaining:
        if r.u8() != FRAME_QUOTE:
            raise ParseError(f"unexpected frame in checkpoint bundle {cp.index}")
        refresh = decode_refresh_quote(r.take(r.u32()))
        if refresh.at_index != cp.index:
            raise ParseError(f"refresh quote at {refresh.at_index} does not follow its checkpoint")
    r.done()
    return cp, leaves, refresh


def encode_chain_file(f: EvidenceChainFile) -> bytes:
    quotes = {rq.at_index: rq for rq in f.refresh_quotes}
    parts = [encode_header(f.header)]
    for cp in f.checkpoints:
        entry = f.leaf_archive.get(cp.index)
        parts.append(checkpoint_bundle(cp, entry.leaves if entry else (), quotes.get(cp.index)))
    return b"".join(parts)


def parse_chain_file(data: bytes, source_path: Optional[Path] = None) -> EvidenceChainFile:
    r = _Reader(data, "chain file")
    header = _decode_header(r)

    checkpoints: List[Checkpoint] = []
    archive: Dict[int, LeafArchiveEntry] = {}
    quotes: List[RefreshQuote] = []
    sizes: List[int] = []
    while r.remaining:
        offset = r.pos
        kind = r.u8()
        body = r.take(r.u32())
        if kind == FRAME_CHECKPOINT:
            checkpoints.append(decode_checkpoint(body))
            sizes.append(len(body))
        elif kind == FRAME_LEAVES:
            index, leaves = decode_leaves(body)
            if not checkpoints or checkpoints[-1].index != index:
                raise ParseError(f"leaf archive entry {index} does not follow its checkpoint")
            if index in archive:
                raise ParseError(f"duplicate leaf archive entry {index}")
            archive[index] = LeafArchiveEntry(checkpoint_index=index, offset=offset, leaves=leaves)
        elif kind == FRAME_QUOTE:
            rq = decode_refresh_quote(body)
            if not checkpoints or checkpoints[-1].index != rq.at_index:
                raise ParseError(f"refresh quote at {rq.at_index} does not follow its checkpoint")
            quotes.append(rq)
        else:
            raise ParseError(f"unknown frame kind {kind} at offset {offset}")

    return EvidenceChainFile(
        header=header,
        checkpoints=checkpoints,
        leaf_archive=archive,
        refresh_quotes=quotes,
        record_sizes=sizes,
        source_path=source_path,
    )


def read_chain_file(path: Path | str) -> EvidenceChainFile:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise PersistenceFailure(f"cannot read {path}: {e}") from e
    return parse_chain_file(data, source_path=path)
