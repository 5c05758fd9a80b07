"""
Pydantic models for the evidence pipeline: input events, behavioral
features, SWF proofs, checkpoints, sealed session state and chain files.
"""
from __future__ import annotations

from enum import Enum, IntEnum
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Tuple

from pydantic import Field, model_validator

from .platform import (
    AttestationQuote,
    Digest,
    MemoryHardParams,
    PublicKeyBytes,
    SignatureBytes,
    WireModel,
)

SessionId = Annotated[bytes, Field(min_length=16, max_length=16)]
U64 = Annotated[int, Field(ge=0, lt=2**64)]

BATCH_CAPACITY = 32          # event slots per frame
BATCH_FRAME_US = 100_000     # one frame every 100 ms


# ---------------- input ----------------
class KeyClass(IntEnum):
    PRINTABLE = 0
    EDIT = 1
    NAVIGATION = 2
    PAD = 3


class KeystrokeEvent(WireModel):
    sequence_number: U64
    timestamp_us: U64
    key_class: KeyClass = KeyClass.PRINTABLE
    is_padding: bool = False


PADDING_EVENT = KeystrokeEvent(sequence_number=0, timestamp_us=0, key_class=KeyClass.PAD, is_padding=True)


class EventBatch(WireModel):
    events: Tuple[KeystrokeEvent, ...]
    batch_index: U64
    tag: Digest

    @property
    def real_events(self) -> List[KeystrokeEvent]:
        return [e for e in self.events if not e.is_padding]


class BehavioralFeatures(WireModel):
    keystroke_count: int = Field(0, ge=0)
    iki_histogram: Dict[int, int] = Field(default_factory=dict)  # bin -> count, zero bins omitted
    shannon_entropy_bits: float = Field(0.0, ge=0.0)
    mean_iki_ms: float = 0.0
    pause_rate: float = 0.0
    mean_burst_length: float = 0.0
    max_burst_length: int = 0
    quantized: Literal[True] = True


# ---------------- SWF ----------------
class SwfParams(WireModel):
    mh: MemoryHardParams = Field(default_factory=MemoryHardParams)
    chain_length: int = Field(2**20, ge=1)
    merkle_stride: int = Field(2**12, ge=1)
    sample_count: int = Field(8, ge=1)

    @model_validator(mode="after")
    def _check_geometry(self) -> "SwfParams":
        if self.chain_length % self.merkle_stride:
            raise ValueError("chain_length must be divisible by merkle_stride")
        if self.sample_count > self.segment_count:
            raise ValueError("sample_count cannot exceed chain_length / merkle_stride")
        return self

    @property
    def segment_count(self) -> int:
        return self.chain_length // self.merkle_stride

    @property
    def leaf_count(self) -> int:
        return self.segment_count + 1


class SwfProof(WireModel):
    checkpoint_index: U64
    seed_input_digest: Digest
    output: Digest
    merkle_root: Digest
    chain_length: int = Field(ge=1)
    mh_params_echo: MemoryHardParams


class SwfOpening(WireModel):
    segment_start_index: int = Field(ge=0)
    start_state: Digest
    end_state: Digest
    start_path: Tuple[bytes, ...]
    end_path: Tuple[bytes, ...]


# ---------------- checkpoints ----------------
class MarkerKind(IntEnum):
    NORMAL = 0
    RECOVERY = 1
    OFFLINE_BUFFERED = 2


class Marker(WireModel):
    kind: MarkerKind = MarkerKind.NORMAL
    gap_us: U64 = 0

    @model_validator(mode="after")
    def _gap_matches_kind(self) -> "Marker":
        if self.kind == MarkerKind.RECOVERY and self.gap_us <= 0:
            raise ValueError("recovery marker needs gap_us > 0")
        if self.kind != MarkerKind.RECOVERY and self.gap_us:
            raise ValueError("only recovery markers carry a gap")
        return self


NORMAL_MARKER = Marker()


class CheckpointPayload(WireModel):
    session_id: SessionId
    index: int = Field(ge=1)
    content_hash: Digest
    behavioral: BehavioralFeatures
    swf: SwfProof
    local_time_us: U64
    marker: Marker = NORMAL_MARKER


class Checkpoint(WireModel):
    payload: CheckpointPayload
    cdce_tag: Digest
    chain_hash: Digest
    signature: SignatureBytes

    @property
    def index(self) -> int:
        return self.payload.index


class SessionConfig(WireModel):
    checkpoint_interval_s: float = Field(30.0, gt=0)
    swf: SwfParams = Field(default_factory=SwfParams)
    entropy_threshold: float = Field(1.5, ge=0)
    tier: Literal[1, 2, 3] = 1
    quote_every_n: int = Field(10, ge=1)
    tee_available: bool = True

    @property
    def interval_us(self) -> int:
        return int(round(self.checkpoint_interval_s * 1_000_000))


class BufferManifestEntry(WireModel):
    index: int
    record_digest: Digest


class SpoolSalvage(WireModel):
    """Outcome of moving an abandoned offline spool into its chain file."""

    salvaged: List[int] = Field(default_factory=list)
    lost: List[int] = Field(default_factory=list)


class SealedSessionState(WireModel):
    session_id: SessionId
    config: SessionConfig
    verifier_nonce: bytes
    signing_seed: Digest
    channel_key: Digest
    chain_path: str
    last_checkpoint: Optional[bytes] = None    # encoded record of C_j
    last_leaves: Optional[bytes] = None        # concatenated leaves of C_j
    last_quote: Optional[bytes] = None         # refresh quote frame body issued at C_j, if any
    prev_chain_hash: Digest
    swf_prev_output: Digest
    next_index: int = Field(ge=1)
    last_local_time_us: U64
    watermark: U64
    offline: bool = False
    offline_manifest: List[BufferManifestEntry] = Field(default_factory=list)
    counter_value: U64


# ---------------- chain file ----------------
class ChainHeader(WireModel):
    version: int = 1
    session_id: SessionId
    public_key: PublicKeyBytes
    verifier_nonce: bytes
    tier: Literal[1, 2, 3] = 1
    tee_available: bool = True
    interval_us: U64
    entropy_threshold: float = Field(1.5, ge=0)
    quote_every_n: int = Field(10, ge=1)
    swf_params: SwfParams
    quote: AttestationQuote
    header_signature: SignatureBytes

    def session_config(self) -> SessionConfig:
        return SessionConfig(
            checkpoint_interval_s=self.interval_us / 1_000_000,
            swf=self.swf_params,
            entropy_threshold=self.entropy_threshold,
            tier=self.tier,
            quote_every_n=self.quote_every_n,
            tee_available=self.tee_available,
        )


class RefreshQuote(WireModel):
    at_index: int = Field(ge=1)
    quote: AttestationQuote


class LeafArchiveEntry(WireModel):
    checkpoint_index: int
    offset: int                   # file offset of the leaf frame
    leaves: Tuple[bytes, ...]


class EvidenceChainFile(WireModel):
    header: ChainHeader
    checkpoints: List[Checkpoint] = Field(default_factory=list)
    leaf_archive: Dict[int, LeafArchiveEntry] = Field(default_factory=dict)
    refresh_quotes: List[RefreshQuote] = Field(default_factory=list)
    record_sizes: List[int] = Field(default_factory=list)
    source_path: Optional[Path] = None


class InterruptPoint(str, Enum):
    BEFORE_SEAL = "before_seal"
    AFTER_SEAL = "after_seal"
