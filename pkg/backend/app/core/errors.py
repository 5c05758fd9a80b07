# backend/app/core/errors.py
"""
Error types raised across the evidence pipeline.

Verifier check failures are NOT errors; they end up inside the report.
Everything here is for conditions the caller has to act on.
"""
from __future__ import annotations


class AttestError(Exception):
    """Base class for every pipeline error."""


# ---------------- crypto / platform ----------------
class AuthenticationFailure(AttestError):
    """Authenticated decryption failed (tampered blob, wrong associated data)."""


class KeyMismatch(AttestError):
    """Blob was sealed under a different seal key."""


class InsufficientMemory(AttestError):
    """Memory-hard derivation could not allocate its working memory."""


class PersistenceFailure(AttestError):
    """A persisted location could not be read or written."""


# ---------------- input channel ----------------
class BadMac(AttestError):
    """Batch tag does not verify under the session channel key."""


class ReplayDetected(AttestError):
    """Batch carries a sequence number at or below the watermark."""


# ---------------- SWF ----------------
class ChallengeMismatch(AttestError):
    """Openings do not match the indices derived from the challenge seed."""


# ---------------- session engine ----------------
class ConfigInvalid(AttestError):
    """Configuration values are missing or out of range."""


class SealCorrupted(AttestError):
    """Sealed state failed authentication; a cold restart is required."""


class RollbackDetected(AttestError):
    """Sealed state is older than the live monotonic counter."""


class TickTooEarly(AttestError):
    """checkpoint_tick called before the checkpoint interval elapsed."""


class SimulatedCrash(AttestError):
    """Raised at a declared interruption point after the session was crashed."""

    def __init__(self, point: str):
        super().__init__(f"simulated crash at {point}")
        self.point = point


# ---------------- analysis / files ----------------
class SingularSystem(AttestError):
    """Steady-state system could not be solved for the given rates."""


class ParseError(AttestError):
    """Evidence chain file (or another wire format) is malformed."""
