"""
Sequential work function.

One memory-hard derivation per checkpoint seeds an L-iteration SHA-256 chain:
    salt_i = H(session_id || i)
    s_0    = Argon2id(prev_output, salt_i)
    s_j    = H(s_{j-1}),  output = s_L
Every g-th state is a leaf; the Merkle root over the leaves lets a verifier
check k pseudo-randomly chosen segments instead of the whole chain.
"""
from __future__ import annotations

import hashlib
import logging
import math
import struct
from typing import List, Sequence, Tuple, Union

from ..core import crypto_core as crypto
from ..core.errors import ChallengeMismatch
from ..models.evidence import SwfOpening, SwfParams, SwfProof
from .merkle import MerkleTree, verify_path

logger = logging.getLogger(__name__)

SWF_INIT_SALT = b"swf-init-v1"
MIN_NONCE_LEN = 16


def swf_init(verifier_nonce: bytes, session_id: bytes) -> bytes:
    if len(verifier_nonce) < MIN_NONCE_LEN:
        raise ValueError(f"verifier nonce must be at least {MIN_NONCE_LEN} bytes")
    return crypto.hkdf(verifier_nonce, salt=SWF_INIT_SALT, info=session_id)


def step_salt(session_id: bytes, checkpoint_index: int) -> bytes:
    return crypto.hash(session_id + struct.pack(">Q", checkpoint_index))


def seed_input_digest(prev_output: bytes, checkpoint_index: int, session_id: bytes) -> bytes:
    return crypto.hash(prev_output + step_salt(session_id, checkpoint_index))


def hash_iterate(state: bytes, n: int) -> bytes:
    sha = hashlib.sha256
    for _ in range(n):
        state = sha(state).digest()
    return state


def _chain(seed: bytes, chain_length: int, stride: int) -> List[bytes]:
    leaves = [seed]
    state = seed
    for _ in range(chain_length // stride):
        state = hash_iterate(state, stride)
        leaves.append(state)
    return leaves


def swf_step(
    params: SwfParams, prev_output: bytes, checkpoint_index: int, session_id: bytes
) -> Tuple[SwfProof, List[bytes]]:
    salt = step_salt(session_id, checkpoint_index)
    seed = crypto.memory_hard_derive(params.mh, prev_output, salt)
    leaves = _chain(seed, params.chain_length, params.merkle_stride)
    proof = SwfProof(
        checkpoint_index=checkpoint_index,
        seed_input_digest=crypto.hash(prev_output + salt),
        output=leaves[-1],
        merkle_root=MerkleTree(leaves).root,
        chain_length=params.chain_length,
        mh_params_echo=params.mh,
    )
    return proof, leaves


def _header_matches(params: SwfParams, proof: SwfProof) -> bool:
    return proof.chain_length == params.chain_length and proof.mh_params_echo == params.mh


def swf_verify_full(
    params: SwfParams, proof: SwfProof, prev_output: bytes, checkpoint_index: int, session_id: bytes
) -> bool:
    if proof.checkpoint_index != checkpoint_index or not _header_matches(params, proof):
        return False
    expected, _ = swf_step(params, prev_output, checkpoint_index, session_id)
    return expected == proof


# ---------------- sampled verification ----------------
def challenge_seed(merkle_root: bytes, prev_chain_hash: bytes, verifier_nonce: bytes) -> bytes:
    return crypto.hash(merkle_root + prev_chain_hash + verifier_nonce)


def challenge_indices(seed: bytes, segment_count: int, sample_count: int) -> List[int]:
    """
    Distinct segment indices: the first min(k, segments) entries of a
    Fisher-Yates shuffle of range(segments) driven by H(seed || t).
    """
    pool = list(range(segment_count))
    k = min(sample_count, segment_count)
    for t in range(k):
        r = int.from_bytes(crypto.hash(seed + struct.pack(">I", t)), "big")
        j = t + r % (segment_count - t)
        pool[t], pool[j] = pool[j], pool[t]
    return pool[:k]


def _opening(tree: MerkleTree, idx: int) -> SwfOpening:
    return SwfOpening(
        segment_start_index=idx,
        start_state=tree.leaves[idx],
        end_state=tree.leaves[idx + 1],
        start_path=tree.path(idx),
        end_path=tree.path(idx + 1),
    )


def swf_open(
    leaves: Union[Sequence[bytes], MerkleTree], proof: SwfProof, challenge_seed: bytes, sample_count: int
) -> List[SwfOpening]:
    """Challenged openings, then one anchor opening of the final segment."""
    tree = leaves if isinstance(leaves, MerkleTree) else MerkleTree(leaves)
    segments = len(tree.leaves) - 1
    if segments < 1:
        raise ValueError("leaf array must hold at least two leaves")
    idxs = challenge_indices(challenge_seed, segments, sample_count)
    return [_opening(tree, i) for i in idxs] + [_opening(tree, segments - 1)]


def _opening_valid(opening: SwfOpening, root: bytes, leaf_count: int, stride: int) -> bool:
    i = opening.segment_start_index
    return (
        verify_path(root, opening.start_state, i, opening.start_path, leaf_count)
        and verify_path(root, opening.end_state, i + 1, opening.end_path, leaf_count)
        and hash_iterate(opening.start_state, stride) == opening.end_state
    )


def swf_verify_sampled(
    params: SwfParams,
    proof: SwfProof,
    openings: Sequence[SwfOpening],
    challenge_seed: bytes,
    sample_count: int | None = None,
) -> bool:
    k = sample_count or params.sample_count
    segments = params.segment_count
    expected = challenge_indices(challenge_seed, segments, k)
    got = [o.segment_start_index for o in openings[:-1]]
    if len(openings) != len(expected) + 1 or got != expected:
        raise ChallengeMismatch(f"openings {got} do not match challenge {expected}")
    if not _header_matches(params, proof):
        return False

    anchor = openings[-1]
    if anchor.segment_start_index != segments - 1 or anchor.end_state != proof.output:
        return False
    leaf_count = params.leaf_count
    return all(_opening_valid(o, proof.merkle_root, leaf_count, params.merkle_stride) for o in openings)


def detection_probability(bad_segments: int, segment_count: int, sample_count: int) -> float:
    """Chance that k distinct segments include at least one bad one (hypergeometric)."""
    k = min(sample_count, segment_count)
    if bad_segments <= 0:
        return 0.0
    return 1.0 - math.comb(segment_count - bad_segments, k) / math.comb(segment_count, k)
