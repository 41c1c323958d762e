"""Seeded random number generation with independent named streams.

Every consumer of randomness (noise sampler, patch picker, initializer, ...)
pulls from its own named stream so that adding draws to one consumer never
shifts the sequence seen by another.  A stream is a PCG64 generator keyed by
(seed, crc32(name)); Gaussian samples are produced by the Box-Muller
transform on the stream's uniform doubles, so the full sample sequence is a
pure function of (seed, stream name, call order).
"""

from __future__ import annotations

import zlib

import numpy as np

_TWO_PI = 2.0 * np.pi


class Stream:
    """One named, independently seeded sample stream."""

    def __init__(self, seed: int, name: str):
        self.name = name
        key = zlib.crc32(name.encode("utf-8"))
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(key,))
        self._bits = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, lo=0.0, hi=1.0, size=None):
        """Uniform draw on [lo, hi)."""
        u = self._bits.random(size)
        return lo + (hi - lo) * u

    def normal(self, size=None, sigma=1.0):
        """Zero-mean Gaussian via Box-Muller on uniform doubles.

        sigma == 0 returns exact zeros (no generator state is consumed),
        so zero-noise paths stay bitwise no-ops.
        """
        shape = () if size is None else tuple(np.atleast_1d(size))
        if sigma == 0.0:
            return np.zeros(shape) if shape else 0.0
        count = int(np.prod(shape)) if shape else 1
        pairs = (count + 1) // 2
        u1 = self._bits.random(pairs)  # in [0, 1) so 1-u1 never hits 0
        u2 = self._bits.random(pairs)
        radius = np.sqrt(-2.0 * np.log(1.0 - u1))
        z = np.concatenate([radius * np.cos(_TWO_PI * u2),
                            radius * np.sin(_TWO_PI * u2)])[:count]
        z *= sigma
        if not shape:
            return float(z[0])
        return z.reshape(shape)

    def integers(self, lo, hi, size=None):
        """Uniform integers on [lo, hi)."""
        return self._bits.integers(lo, hi, size=size)


class Rng:
    """Root generator handing out cached named streams.

    The same (seed, name) pair always yields the same sample sequence;
    requesting an existing name returns the stream where it left off.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, Stream] = {}

    def stream(self, name: str) -> Stream:
        if name not in self._streams:
            self._streams[name] = Stream(self.seed, name)
        return self._streams[name]
