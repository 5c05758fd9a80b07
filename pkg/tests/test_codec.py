import pytest

from backend.app.core.errors import ParseError, PersistenceFailure
from backend.app.models.evidence import BehavioralFeatures
from backend.app.services import codec
from backend.app.services.behavior import extract_features

from .conftest import keystrokes


def test_chain_file_reencodes_identically(honest_chain):
    data = honest_chain.chain_path.read_bytes()
    f = codec.parse_chain_file(data)
    assert len(f.checkpoints) == 5
    assert [cp.index for cp in f.checkpoints] == [1, 2, 3, 4, 5]
    assert set(f.leaf_archive) == {1, 2, 3, 4, 5}
    assert codec.encode_chain_file(f) == data


def test_record_sizes_recorded(honest_chain):
    f = codec.read_chain_file(honest_chain.chain_path)
    assert len(f.record_sizes) == 5
    assert all(size < 2048 for size in f.record_sizes)


def test_checkpoint_roundtrip(honest_chain):
    cp = honest_chain.last_checkpoint
    assert codec.decode_checkpoint(codec.encode_checkpoint(cp)) == cp


def test_behavioral_encoding_is_canonical():
    f = extract_features(keystrokes(0, 50))
    assert codec.decode_behavioral(codec.encode_behavioral(f)) == f
    assert codec.decode_behavioral(codec.encode_behavioral(BehavioralFeatures())) == BehavioralFeatures()


def test_truncated_file_is_parse_error(honest_chain):
    data = honest_chain.chain_path.read_bytes()
    for cut in (3, 40, len(data) - 1):
        with pytest.raises(ParseError):
            codec.parse_chain_file(data[:cut])


def test_trailing_garbage_is_parse_error(honest_chain):
    data = honest_chain.chain_path.read_bytes()
    with pytest.raises(ParseError):
        codec.parse_chain_file(data + b"\x09\x00\x00\x00\x00")


def test_bad_magic(honest_chain):
    data = honest_chain.chain_path.read_bytes()
    with pytest.raises(ParseError):
        codec.parse_chain_file(b"X" + data[1:])


def test_orphan_leaf_frame_rejected(honest_chain):
    f = codec.read_chain_file(honest_chain.chain_path)
    stray = codec.frame(codec.FRAME_LEAVES, codec.encode_leaves(9, f.leaf_archive[1].leaves))
    with pytest.raises(ParseError):
        codec.parse_chain_file(honest_chain.chain_path.read_bytes() + stray)


def test_missing_file(tmp_path):
    with pytest.raises(PersistenceFailure):
        codec.read_chain_file(tmp_path / "nope.bin")


def test_chain_hash_covers_marker(honest_chain):
    from backend.app.models.evidence import Marker, MarkerKind

    p = honest_chain.last_checkpoint.payload
    moved = p.model_copy(update={"marker": Marker(kind=MarkerKind.OFFLINE_BUFFERED)})
    assert codec.chain_hash(b"\x00" * 32, p) != codec.chain_hash(b"\x00" * 32, moved)
