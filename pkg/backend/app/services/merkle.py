"""
Binary Merkle tree over 32-byte chain states.

Leaves are padded to the next power of two by repeating the last leaf.
Leaf hash = H(0x00 || leaf), node hash = H(0x01 || left || right).
"""
from __future__ import annotations

from typing import List, Sequence, Tuple

from ..core import crypto_core as crypto

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"


def leaf_hash(leaf: bytes) -> bytes:
    return crypto.hash(LEAF_PREFIX + leaf)


def node_hash(left: bytes, right: bytes) -> bytes:
    return crypto.hash(NODE_PREFIX + left + right)


def padded_size(n: int) -> int:
    size = 1
    while size < n:
        size <<= 1
    return size


def depth_for(n: int) -> int:
    return padded_size(n).bit_length() - 1


class MerkleTree:
    def __init__(self, leaves: Sequence[bytes]):
        if not leaves:
            raise ValueError("merkle tree needs at least one leaf")
        self.leaves: List[bytes] = list(leaves)
        padded = self.leaves + [self.leaves[-1]] * (padded_size(len(self.leaves)) - len(self.leaves))
        level = [leaf_hash(x) for x in padded]
        self.levels: List[List[bytes]] = [level]
        while len(level) > 1:
            level = [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
            self.levels.append(level)

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def path(self, index: int) -> Tuple[bytes, ...]:
        if not 0 <= index < len(self.leaves):
            raise IndexError(f"leaf {index} out of range")
        out = []
        for level in self.levels[:-1]:
            out.append(level[index ^ 1])
            index //= 2
        return tuple(out)


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    return MerkleTree(leaves).root


def verify_path(root: bytes, leaf: bytes, index: int, path: Sequence[bytes], leaf_count: int) -> bool:
    if not 0 <= index < leaf_count or len(path) != depth_for(leaf_count):
        return False
    node = leaf_hash(leaf)
    for sibling in path:
        if len(sibling) != crypto.DIGEST_SIZE:
            return False
        node = node_hash(sibling, node) if index & 1 else node_hash(node, sibling)
        index //= 2
    return node == root
