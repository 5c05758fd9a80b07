"""
Cryptographic primitives and the simulated platform trust root.

hash / mac / signatures / sealing / memory-hard derivation live here so the
rest of the pipeline never touches a crypto library directly.
"""
from __future__ import annotations

import hashlib
import hmac
import logging
import os
import struct
from pathlib import Path
from typing import Callable, Optional

from argon2.exceptions import HashingError
from argon2.low_level import Type, hash_secret_raw
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AuthenticationFailure, ConfigInvalid, InsufficientMemory, KeyMismatch
from ..models.platform import AttestationQuote, MemoryHardParams, SealedBlob

logger = logging.getLogger(__name__)

DIGEST_SIZE = 32
PIPELINE_IDENTITY = b"attestchain/evidence-pipeline/1"
QUOTE_DOMAIN = b"QUOTE1"
SEAL_MAGIC = b"SEAL"

RandomBytes = Callable[[int], bytes]


# ---------------- hashing / MAC ----------------
def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the protocol's H()
    """SHA-256."""
    return hashlib.sha256(data).digest()


def hkdf(ikm: bytes, *, salt: Optional[bytes], info: bytes, length: int = DIGEST_SIZE) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(ikm)


def hmac_sha256(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def mac(key: bytes, data: bytes) -> bytes:
    if len(key) != DIGEST_SIZE:
        raise ValueError(f"mac key must be {DIGEST_SIZE} bytes, got {len(key)}")
    return hmac_sha256(key, data)


def mac_verify(key: bytes, data: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac(key, data), tag)


# ---------------- signatures ----------------
class KeyPair:
    """Ed25519 signing key. The seed stays inside the simulated enclave state."""

    def __init__(self, private_key: Ed25519PrivateKey):
        self._sk = private_key
        self.public = private_key.public_key().public_bytes(
            encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw
        )

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    @classmethod
    def generate(cls, random_bytes: RandomBytes = os.urandom) -> "KeyPair":
        return cls.from_seed(random_bytes(32))

    @property
    def seed(self) -> bytes:
        return self._sk.private_bytes(
            encoding=serialization.Encoding.Raw,
            format=serialization.PrivateFormat.Raw,
            encryption_algorithm=serialization.NoEncryption(),
        )

    def sign(self, message: bytes) -> bytes:
        return self._sk.sign(message)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


# ---------------- platform root ----------------
def measurement(config_bytes: bytes) -> bytes:
    """Enclave identity: pipeline code identity bound to the session configuration."""
    return hash(PIPELINE_IDENTITY + config_bytes)


def quote_message(enclave_measurement: bytes, public_key: bytes, nonce: bytes) -> bytes:
    return QUOTE_DOMAIN + enclave_measurement + public_key + struct.pack(">H", len(nonce)) + nonce


class PlatformRoot:
    """Software stand-in for the hardware attestation root and sealing key source."""

    def __init__(self, platform_secret: bytes, root_key: Optional[KeyPair] = None):
        if len(platform_secret) < 16:
            raise ConfigInvalid("platform secret must be at least 16 bytes")
        self._secret = platform_secret
        self._root = root_key or KeyPair.from_seed(
            hkdf(platform_secret, salt=b"platform-root-v1", info=b"root-signing-key")
        )

    @classmethod
    def from_settings(cls, settings) -> "PlatformRoot":
        root = None
        if settings.root_key_path is not None:
            root = load_root_key(settings.root_key_path)
        return cls(settings.platform_secret, root)

    @property
    def public_key(self) -> bytes:
        return self._root.public

    def seal_key(self, enclave_measurement: bytes) -> bytes:
        return hkdf(self._secret + enclave_measurement, salt=b"seal-key-v1", info=b"sealing")

    def issue_quote(self, enclave_measurement: bytes, public_key: bytes, nonce: bytes) -> AttestationQuote:
        sig = self._root.sign(quote_message(enclave_measurement, public_key, nonce))
        return AttestationQuote(
            enclave_measurement=enclave_measurement,
            bound_public_key=public_key,
            nonce=nonce,
            root_signature=sig,
        )


def verify_quote(quote: AttestationQuote, root_public_key: bytes) -> bool:
    msg = quote_message(quote.enclave_measurement, quote.bound_public_key, quote.nonce)
    return verify_signature(root_public_key, msg, quote.root_signature)


def load_root_key(path: Path | str) -> KeyPair:
    path = Path(path)
    try:
        key = serialization.load_pem_private_key(path.read_bytes(), password=None)
    except (OSError, ValueError) as e:
        raise ConfigInvalid(f"cannot load root key {path}: {e}") from e
    if not isinstance(key, Ed25519PrivateKey):
        raise ConfigInvalid(f"root key {path} is not an Ed25519 key")
    return KeyPair(key)


def write_root_key(path: Path | str, key: KeyPair) -> None:
    pem = key._sk.private_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PrivateFormat.PKCS8,
        encryption_algorithm=serialization.NoEncryption(),
    )
    Path(path).write_bytes(pem)


# ---------------- sealing ----------------
def seal_key_id(key: bytes) -> bytes:
    return hash(b"seal-key-id" + key)[:8]


def counter_nonce(counter: int) -> bytes:
    return b"\x00" * 4 + struct.pack(">Q", counter)


def seal(key: bytes, plaintext: bytes, associated_data: bytes, counter: int) -> SealedBlob:
    """AES-256-GCM under the seal key; the nonce is derived from the monotonic counter."""
    nonce = counter_nonce(counter)
    ct = AESGCM(key).encrypt(nonce, plaintext, associated_data)
    return SealedBlob(key_id=seal_key_id(key), counter_value=counter, nonce=nonce, ciphertext=ct)


def unseal(key: bytes, blob: SealedBlob, associated_data: bytes) -> bytes:
    if not hmac.compare_digest(blob.key_id, seal_key_id(key)):
        raise KeyMismatch("blob was sealed under a different key")
    try:
        return AESGCM(key).decrypt(blob.nonce, blob.ciphertext, associated_data)
    except InvalidTag as e:
        raise AuthenticationFailure("sealed blob failed authentication") from e


def blob_to_bytes(blob: SealedBlob) -> bytes:
    return SEAL_MAGIC + blob.key_id + struct.pack(">Q", blob.counter_value) + blob.nonce + blob.ciphertext


def blob_from_bytes(data: bytes) -> SealedBlob:
    head = len(SEAL_MAGIC) + 8 + 8 + 12
    if len(data) < head + 16 or data[:4] != SEAL_MAGIC:
        raise AuthenticationFailure("not a sealed blob")
    (counter,) = struct.unpack(">Q", data[12:20])
    return SealedBlob(key_id=data[4:12], counter_value=counter, nonce=data[20:32], ciphertext=data[32:])


# ---------------- memory-hard derivation ----------------
def memory_hard_derive(params: MemoryHardParams, data: bytes, salt: bytes) -> bytes:
    """Argon2id with a single lane."""
    try:
        return hash_secret_raw(
            secret=data,
            salt=salt,
            time_cost=params.time_cost,
            memory_cost=params.memory_kib,
            parallelism=params.parallelism,
            hash_len=params.output_len,
            type=Type.ID,
        )
    except MemoryError as e:
        raise InsufficientMemory(f"cannot allocate {params.memory_kib} KiB") from e
    except HashingError as e:
        if "memory" in str(e).lower():
            raise InsufficientMemory(str(e)) from e
        raise
