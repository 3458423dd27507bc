"""Seedable, platform-independent random streams.

Every stochastic operation in the package takes an explicit ``RngState``
instead of touching global state. A state is defined by a 64-bit seed plus a
key path of named substreams; identical (seed, key, call sequence) produces
bit-identical draws on every platform, courtesy of numpy's PCG64.

Substreams derived with :meth:`RngState.spawn` are statistically independent,
so e.g. the data-sampling stream of a training run is unaffected by whether
the adversarial machinery consumes randomness or not.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["RngState"]


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError(f"rng key parts must be non-negative, got {part}")
    return part % (1 << 32)


class RngState:
    """A named position in a deterministic random stream."""

    __slots__ = ("seed", "key", "draws", "_gen")

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(_key_part(p) for p in key)
        self.draws = 0
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, *key_parts) -> "RngState":
        """Derive an independent substream; does not advance this stream."""
        return RngState(self.seed, self.key + tuple(key_parts))

    def clone(self) -> "RngState":
        """A fresh copy positioned at the start of this stream's key path.

        Note: the clone restarts the stream, it does not copy the current
        position. Useful for replaying a substream from its origin.
        """
        return RngState(self.seed, self.key)

    # -- draws (each advances the stream) -----------------------------------

    def uniform(self, shape=None) -> np.ndarray:
        self.draws += 1
        return self._gen.uniform(0.0, 1.0, size=shape)

    def normal(self, shape=None) -> np.ndarray:
        self.draws += 1
        return self._gen.standard_normal(size=shape)

    def integers(self, n: int, shape=None):
        """Uniform integers in [0, n)."""
        self.draws += 1
        return self._gen.integers(0, n, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        self.draws += 1
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        self.draws += 1
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"RngState(seed={self.seed}, key={self.key}, draws={self.draws})"
