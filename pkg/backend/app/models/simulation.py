"""
Pydantic models for the Monte Carlo and end-to-end session simulators.
"""
from __future__ import annotations

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .dependability import Branching, CtmcParams
from .evidence import EvidenceChainFile


class McConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: CtmcParams = Field(default_factory=CtmcParams)
    horizon_hours: float = Field(10_000.0, gt=0)
    trials: int = Field(100, ge=1)
    rng_seed: int = Field(0, ge=0, lt=2**64)
    sealed_recovery: bool = True
    branching: Branching = Branching.SPLIT


class McResult(BaseModel):
    eca_estimate: float
    std_error: float
    confidence_interval_95: Tuple[float, float]
    dwell_fractions: Dict[str, float]
    gap_count: int
    trials: int
    horizon_hours: float


class FaultKind(str, Enum):
    CRASH = "crash"
    PARTITION_START = "partition_start"
    PARTITION_END = "partition_end"
    SEAL_CORRUPT = "seal_corrupt"


class FaultMode(str, Enum):
    STOCHASTIC = "stochastic"
    SCRIPTED = "scripted"
    ADVERSARIAL_WORST_CASE = "adversarial"


class FaultEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    time_s: float = Field(ge=0)
    kind: FaultKind


class FaultProfile(BaseModel):
    mode: FaultMode = FaultMode.SCRIPTED
    events: List[FaultEvent] = Field(default_factory=list)
    rates: Optional[CtmcParams] = None     # per hour, used in STOCHASTIC mode
    n_crashes: int = Field(0, ge=0)        # used in ADVERSARIAL_WORST_CASE mode
    recovery_delay_s: float = Field(1.0, ge=0)
    cold_restart_delay_s: float = Field(10.0, ge=0)
    adversarial_lead_s: float = Field(0.5, gt=0)   # crash this long before a checkpoint completes

    @model_validator(mode="after")
    def _mode_inputs(self) -> "FaultProfile":
        if self.mode == FaultMode.STOCHASTIC and self.rates is None:
            raise ValueError("stochastic fault profile needs rates")
        return self


class TypingModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    median_iki_ms: float = Field(90.0, gt=0)
    sigma: float = Field(0.5, ge=0)
    session_duration_s: float = Field(14_400.0, ge=0)
    edit_probability: float = Field(0.08, ge=0, le=1)
    navigation_probability: float = Field(0.04, ge=0, le=1)


class FaultOutcome(str, Enum):
    RECOVERED = "recovered"
    STACKED = "stacked"
    COLD_RESTART = "cold_restart"
    PARTITION = "partition"


class FaultRecord(BaseModel):
    time_s: float
    kind: FaultKind
    outcome: FaultOutcome
    session_ordinal: int
    marker_index: Optional[int] = None
    lost_evidence_s: float = 0.0
    downtime_s: float = 0.0
    lost_buffered: int = 0           # spooled checkpoints that could not be salvaged on cold restart


class SessionRun(BaseModel):
    chains: List[EvidenceChainFile]
    chain_paths: List[str]
    verifier_nonces: List[bytes]
    fault_log: List[FaultRecord]
    checkpoint_interval_s: float
    duration_s: float = 0.0
    lifecycle_counts: Dict[str, int] = Field(default_factory=dict)

    @property
    def crash_records(self) -> List[FaultRecord]:
        return [r for r in self.fault_log if r.kind in (FaultKind.CRASH, FaultKind.SEAL_CORRUPT)]


class LatencyStats(BaseModel):
    mean_ms: float
    p99_ms: float
    min_ms: float
    max_ms: float
    samples: int


class RecoveryBench(BaseModel):
    sealed: LatencyStats
    cold: LatencyStats
    repetitions: int
    memory_cost: int
