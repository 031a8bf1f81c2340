"""Keyed, replayable randomness.

Every stochastic quantity in the library is drawn from a generator derived
from a structured draw key: a tuple of ints, strings, and byte strings such
as ``(master_seed, "traj", k, prefix_key, j)``.  The key is hashed into the
128-bit key of a counter-based Philox generator, so the same key always
yields the same stream regardless of call order.  This makes every sampling
decision a pure function of its key, which is what lets the on-demand
recursion and the full-sweep reference method share randomness exactly.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

KeyPart = int | str | bytes

_INV_2_53 = 2.0 ** -53


def key_digest(*parts: KeyPart) -> bytes:
    """16-byte digest of a structured draw key. Ints, strings, and bytes only."""
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        if isinstance(part, bool):
            raise TypeError("bool key parts are ambiguous; use int")
        if isinstance(part, int):
            h.update(b"i")
            h.update(part.to_bytes(16, "little", signed=True))
        elif isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s")
            h.update(len(raw).to_bytes(4, "little"))
            h.update(raw)
        elif isinstance(part, bytes):
            h.update(b"b")
            h.update(len(part).to_bytes(4, "little"))
            h.update(part)
        else:
            raise TypeError(f"unsupported key part type: {type(part)!r}")
    return h.digest()


def generator(*parts: KeyPart) -> np.random.Generator:
    """Counter-based generator seeded purely by the draw key.

    Convenient for cold paths that want the full numpy Generator API
    (choice, permutation); construction costs tens of microseconds, so hot
    paths use ``UniformStream`` instead.
    """
    digest = key_digest(*parts)
    words = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=words))


class UniformStream:
    """Cheap counter-expanded U[0,1) stream from a draw key.

    Each 32-byte block is blake2b(digest || block_counter) and yields four
    53-bit uniforms, so the stream is a pure function of the key with no
    generator-construction overhead.
    """

    __slots__ = ("digest", "_block", "_pos", "_counter")

    def __init__(self, *parts: KeyPart):
        self.digest = key_digest(*parts)
        self._block: tuple[int, ...] = ()
        self._pos = 0
        self._counter = 0

    def next(self) -> float:
        if self._pos >= len(self._block):
            h = hashlib.blake2b(
                self.digest + self._counter.to_bytes(8, "little"),
                digest_size=32)
            words = struct.unpack("<4Q", h.digest())
            self._block = tuple(w >> 11 for w in words)
            self._pos = 0
            self._counter += 1
        v = self._block[self._pos]
        self._pos += 1
        return v * _INV_2_53


def uniform(*parts: KeyPart) -> float:
    """One U[0,1) variate as a pure function of the draw key."""
    return UniformStream(*parts).next()
