import time

import numpy as np
import pytest

from backend.app.core import crypto_core as crypto
from backend.app.core.errors import AuthenticationFailure, ConfigInvalid, KeyMismatch
from backend.app.models.platform import MemoryHardParams

from .conftest import SECRET


def test_sha256_vectors():
    assert crypto.hash(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert crypto.hash(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_hmac_rfc4231_case_1():
    tag = crypto.hmac_sha256(b"\x0b" * 20, b"Hi There")
    assert tag.hex() == "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"


def test_mac_requires_32_byte_key():
    with pytest.raises(ValueError):
        crypto.mac(b"short", b"data")
    key = bytes(32)
    tag = crypto.mac(key, b"data")
    assert crypto.mac_verify(key, b"data", tag)
    assert not crypto.mac_verify(key, b"datA", tag)


def test_signatures_are_deterministic_per_seed():
    kp = crypto.KeyPair.from_seed(b"\x01" * 32)
    sig = kp.sign(b"message")
    assert sig == crypto.KeyPair.from_seed(b"\x01" * 32).sign(b"message")
    assert crypto.verify_signature(kp.public, b"message", sig)
    assert not crypto.verify_signature(kp.public, b"messagf", sig)
    assert not crypto.verify_signature(b"\x00" * 32, b"message", sig)


def test_quote_verifies_under_root_only():
    root = crypto.PlatformRoot(SECRET)
    kp = crypto.KeyPair.from_seed(b"\x02" * 32)
    q = root.issue_quote(b"\x11" * 32, kp.public, b"nonce-nonce-nonce")
    assert crypto.verify_quote(q, root.public_key)
    other = crypto.PlatformRoot(b"another-secret-with-16+bytes")
    assert not crypto.verify_quote(q, other.public_key)
    assert not crypto.verify_quote(q.model_copy(update={"nonce": b"other"}), root.public_key)


def test_platform_secret_too_short():
    with pytest.raises(ConfigInvalid):
        crypto.PlatformRoot(b"short")


def test_root_key_pem_roundtrip(tmp_path):
    kp = crypto.KeyPair.from_seed(b"\x03" * 32)
    crypto.write_root_key(tmp_path / "root.pem", kp)
    assert crypto.load_root_key(tmp_path / "root.pem").public == kp.public
    root = crypto.PlatformRoot(SECRET, kp)
    assert root.public_key == kp.public


def test_load_root_key_rejects_garbage(tmp_path):
    (tmp_path / "bad.pem").write_text("not a key")
    with pytest.raises(ConfigInvalid):
        crypto.load_root_key(tmp_path / "bad.pem")


def test_seal_key_bound_to_measurement():
    root = crypto.PlatformRoot(SECRET)
    assert root.seal_key(b"\x01" * 32) != root.seal_key(b"\x02" * 32)
    assert root.seal_key(b"\x01" * 32) == crypto.PlatformRoot(SECRET).seal_key(b"\x01" * 32)


def test_seal_unseal():
    key = bytes(range(32))
    blob = crypto.seal(key, b"state", b"ad", 7)
    assert blob.nonce == b"\x00" * 4 + (7).to_bytes(8, "big")
    assert crypto.unseal(key, blob, b"ad") == b"state"
    assert crypto.blob_from_bytes(crypto.blob_to_bytes(blob)) == blob


def test_unseal_wrong_ad_or_tamper():
    key = bytes(range(32))
    blob = crypto.seal(key, b"state", b"ad", 1)
    with pytest.raises(AuthenticationFailure):
        crypto.unseal(key, blob, b"other")
    flipped = blob.model_copy(update={"ciphertext": bytes([blob.ciphertext[0] ^ 1]) + blob.ciphertext[1:]})
    with pytest.raises(AuthenticationFailure):
        crypto.unseal(key, flipped, b"ad")


def test_unseal_wrong_key_is_key_mismatch():
    blob = crypto.seal(bytes(32), b"state", b"ad", 1)
    with pytest.raises(KeyMismatch):
        crypto.unseal(b"\x01" * 32, blob, b"ad")


def test_blob_from_bytes_rejects_non_blob():
    with pytest.raises(AuthenticationFailure):
        crypto.blob_from_bytes(b"JUNK" + bytes(60))


def test_argon2id_reference_vector():
    params = MemoryHardParams(memory_cost=65536 * 1024, time_cost=2)
    out = crypto.memory_hard_derive(params, b"password", b"somesalt")
    assert out.hex() == "09316115d5cf24ed5a15a31a3ba326e5cf32edc24702987c02b6566f61913cf7"


def test_memory_hard_params_validation():
    with pytest.raises(ValueError):
        MemoryHardParams(memory_cost=4 * 1024)
    with pytest.raises(ValueError):
        MemoryHardParams(memory_cost=8 * 1024 + 1)


def test_measurement_binds_config_bytes():
    assert crypto.measurement(b"a") != crypto.measurement(b"b")
    assert crypto.measurement(b"a") == crypto.hash(crypto.PIPELINE_IDENTITY + b"a")


def _flip_bit(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


@pytest.mark.slow
def test_random_messages_sign_and_any_bit_flip_fails():
    rng = np.random.default_rng(7)
    kp = crypto.KeyPair.from_seed(rng.bytes(32))
    for _ in range(10_000):
        msg = rng.bytes(int(rng.integers(1, 257)))
        sig = kp.sign(msg)
        assert crypto.verify_signature(kp.public, msg, sig)
        bad = _flip_bit(msg, int(rng.integers(len(msg) * 8)))
        assert not crypto.verify_signature(kp.public, bad, sig)


def test_every_ciphertext_bit_flip_is_detected():
    rng = np.random.default_rng(8)
    key = rng.bytes(32)
    blob = crypto.seal(key, rng.bytes(200), b"state", 3)
    bits = len(blob.ciphertext) * 8
    for _ in range(1000):
        flipped = blob.model_copy(update={"ciphertext": _flip_bit(blob.ciphertext, int(rng.integers(bits)))})
        with pytest.raises(AuthenticationFailure):
            crypto.unseal(key, flipped, b"state")


@pytest.mark.slow
def test_memory_cost_drives_derivation_time():
    def timed(memory_cost: int) -> float:
        params = MemoryHardParams(memory_cost=memory_cost)
        start = time.perf_counter()
        crypto.memory_hard_derive(params, b"prev-output", b"salt-salt-salt-salt")
        return time.perf_counter() - start

    small = min(timed(1 << 20) for _ in range(3))
    large = min(timed(64 << 20) for _ in range(3))
    assert large > 8 * small
