"""
Verifier policy and report models.
"""
from __future__ import annotations

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator

from .evidence import MarkerKind


class VerificationMode(str, Enum):
    FULL_RECOMPUTE = "full"
    SAMPLED = "sampled"
    LINKAGE_ONLY = "linkage"


class FidelityMode(str, Enum):
    FULL = "full"
    DEGRADED = "degraded"
    MINIMAL = "minimal"


class Verdict(str, Enum):
    VALID = "Valid"
    VALID_WITH_GAPS = "ValidWithGaps"
    INVALID = "Invalid"


class CheckpointState(str, Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNREACHABLE = "unreachable"


class FreshnessReason(str, Enum):
    OK = "Ok"
    NONCE_MISMATCH = "NonceMismatch"
    SWF_BREAK = "SwfBreak"
    LOW_ENTROPY = "LowEntropy"


class VerificationPolicy(BaseModel):
    mode: VerificationMode = VerificationMode.FULL_RECOMPUTE
    sample_count: Optional[int] = Field(None, ge=1)      # k; None = the header's
    checkpoint_sample_fraction: float = Field(0.10, ge=0.0, le=1.0)
    entropy_threshold: float = Field(1.5, ge=0.0)
    alpha: float = 1.0
    t_max_s: float = 86_400.0
    beta: float = 0.3
    gap_tolerance_s: float = Field(2.0, ge=0.0)
    max_hash_rate: float = Field(5e8, gt=0)              # SHA-256 iterations/s considered plausible
    expected_measurement: Optional[bytes] = None
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_constants(self) -> "VerificationPolicy":
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.t_max_s <= 0:
            raise ValueError("t_max must be > 0")
        return self


class GapEntry(BaseModel):
    index: int
    duration_s: float
    marker: MarkerKind


class CheckpointStatus(BaseModel):
    index: int
    state: CheckpointState
    marker: MarkerKind = MarkerKind.NORMAL
    fidelity: float = 1.0
    swf_check: str = "none"
    failures: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)


class VerificationReport(BaseModel):
    verdict: Verdict
    mode: VerificationMode
    session_id: str = ""
    checkpoint_count: int = 0
    statuses: List[CheckpointStatus] = Field(default_factory=list)
    gaps: List[GapEntry] = Field(default_factory=list)
    fidelity_aggregate: float = 1.0
    header_failures: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    failure_index: Optional[int] = None
    failure_reason: Optional[str] = None
    elapsed_s: float = 0.0

    @property
    def has_gaps(self) -> bool:
        return bool(self.gaps)


class FreshnessResult(BaseModel):
    fresh: bool
    reason: FreshnessReason
    detail: str = ""
