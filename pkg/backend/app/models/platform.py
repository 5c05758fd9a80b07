"""
Pydantic models for the simulated platform trust root: memory-hard params,
attestation quotes and sealed blobs.
"""
from __future__ import annotations

from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

Digest = Annotated[bytes, Field(min_length=32, max_length=32)]
PublicKeyBytes = Annotated[bytes, Field(min_length=32, max_length=32)]
SignatureBytes = Annotated[bytes, Field(min_length=64, max_length=64)]

MIN_MEMORY_COST = 8 * 1024
DEFAULT_MEMORY_COST = 64 * 1024 * 1024


class WireModel(BaseModel):
    """Immutable model whose bytes fields travel as hex in JSON."""

    model_config = ConfigDict(frozen=True, ser_json_bytes="hex", val_json_bytes="hex")


class MemoryHardParams(WireModel):
    memory_cost: int = Field(DEFAULT_MEMORY_COST, ge=MIN_MEMORY_COST)  # bytes
    time_cost: int = Field(1, ge=1)
    parallelism: Literal[1] = 1
    output_len: Literal[32] = 32

    @field_validator("memory_cost")
    @classmethod
    def _whole_kib(cls, v: int) -> int:
        if v % 1024:
            raise ValueError("memory_cost must be a whole number of KiB")
        return v

    @property
    def memory_kib(self) -> int:
        return self.memory_cost // 1024


class AttestationQuote(WireModel):
    enclave_measurement: Digest
    bound_public_key: PublicKeyBytes
    nonce: bytes
    root_signature: SignatureBytes


class SealedBlob(WireModel):
    key_id: Annotated[bytes, Field(min_length=8, max_length=8)]
    counter_value: int = Field(ge=0, lt=2**64)
    nonce: Annotated[bytes, Field(min_length=12, max_length=12)]
    ciphertext: bytes
