"""Seed discipline: one master seed, named substreams derived by stable hashing.

Adding a consumer never perturbs another consumer's randomness, because each
substream is keyed by its name rather than by creation order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> tuple[int, ...]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for consumer `name` under master `seed`."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_name_key(name))
    return np.random.Generator(np.random.PCG64(ss))


class DrawStream:
    """Sequential uniform [0, 1) draws served from buffered blocks.

    The sequence is identical no matter how it is chunked, so the reference
    broker (one pass at a time) and the compiled engine (whole buffers) see
    the same draws in the same order.
    """

    def __init__(self, generator: np.random.Generator, block: int = 1 << 16):
        self._gen = generator
        self._block = block
        self._buf = np.empty(0)
        self._pos = 0
        self.consumed = 0

    def window(self, n: int) -> np.ndarray:
        """At least `n` upcoming draws, without consuming them."""
        avail = len(self._buf) - self._pos
        if avail < n:
            extra = max(n - avail, self._block)
            self._buf = np.concatenate([self._buf[self._pos:], self._gen.random(extra)])
            self._pos = 0
        return self._buf[self._pos:]

    def consume(self, k: int) -> None:
        if k > len(self._buf) - self._pos:
            raise ValueError("consuming more draws than were windowed")
        self._pos += k
        self.consumed += k

    def take(self, k: int) -> np.ndarray:
        out = self.window(k)[:k].copy()
        self.consume(k)
        return out
