from __future__ import annotations

import pytest

from backend.app.core.config import Settings, settings_from_mapping
from backend.app.core.crypto_core import PlatformRoot
from backend.app.models.evidence import KeyClass, KeystrokeEvent, SessionConfig
from backend.app.services.evidence_chain import checkpoint_tick, open_store, session_init

SECRET = bytes(range(32))
NONCE = b"verifier-nonce-0123456789abcdef!"

# small enough that a checkpoint costs a few milliseconds
TEST_SCALE = {
    "PLATFORM_SECRET": SECRET.hex(),
    "MH_MEMORY_KIB": "8",
    "SWF_CHAIN_LENGTH": "64",
    "SWF_MERKLE_STRIDE": "8",
    "SWF_SAMPLE_COUNT": "4",
    "STORE_FSYNC": "false",
}


@pytest.fixture
def settings() -> Settings:
    return settings_from_mapping(TEST_SCALE)


@pytest.fixture
def config(settings) -> SessionConfig:
    return settings.session_config()


@pytest.fixture
def platform() -> PlatformRoot:
    return PlatformRoot(SECRET)


@pytest.fixture
def store(platform, config, tmp_path):
    return open_store(platform, config, tmp_path / "store", fsync=False)


def keystrokes(start_us: int, count: int, gap_us: int = 90_000, first_seq: int = 1):
    return [
        KeystrokeEvent(
            sequence_number=first_seq + i,
            timestamp_us=start_us + i * gap_us + (i % 7) * 11_000,
            key_class=KeyClass.PRINTABLE,
        )
        for i in range(count)
    ]


@pytest.fixture
def new_session(config, platform, store, tmp_path):
    def make(nonce: bytes = NONCE, cfg: SessionConfig | None = None, chain_name: str = "chain.bin"):
        # the store is keyed to the configuration
        st = store if cfg is None else open_store(platform, cfg, tmp_path / "store-alt", fsync=False)
        return session_init(
            cfg or config, nonce, platform=platform, store=st, chain_path=tmp_path / chain_name, now_us=0
        )
    return make


@pytest.fixture
def honest_chain(new_session, config):
    """A session with five normal checkpoints; returns the session."""
    session, _ = new_session()
    step = config.interval_us
    for i in range(1, 6):
        events = keystrokes((i - 1) * step + 1_000, 40, first_seq=(i - 1) * 40 + 1)
        checkpoint_tick(session, events, f"draft {i}".encode(), now_us=i * step)
    return session
