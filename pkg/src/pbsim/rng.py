"""Reproducible random streams.

One ``RandomStream`` per replica, built on the counter-based Philox bit
generator.  Every variate is derived from one deterministic sequence of
53-bit uniforms, mapped as ``(i + 0.5) * 2**-53`` so draws are strictly
inside (0, 1): normals are the inverse-CDF transform, exponentials the log
transform, and bounded integers ``floor(u * n)`` (the 2**-53 quantisation
bias is far below anything the diagnostics can resolve).  Uniforms are
pulled from the generator in fixed-size blocks; refill points depend only
on the call sequence, so a seed fully determines a run bit for bit.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri

_INV_2_53 = 1.0 / float(1 << 53)
_BLOCK = 4096


class RandomStream:
    """Deterministic stream of variates derived from a 64-bit seed."""

    __slots__ = ("seed", "_gen", "_buf", "_pos")

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        self._buf = np.empty(0)
        self._pos = 0

    def _refill(self):
        raw = self._gen.integers(0, 1 << 53, size=_BLOCK, dtype=np.int64)
        self._buf = (raw + 0.5) * _INV_2_53
        self._pos = 0

    def uniform(self, size=None):
        """Uniform draw(s) in the open interval (0, 1)."""
        if size is None:
            if self._pos >= len(self._buf):
                self._refill()
            v = self._buf[self._pos]
            self._pos += 1
            return float(v)
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(math.prod(shape))
        out = np.empty(n)
        filled = 0
        while filled < n:
            if self._pos >= len(self._buf):
                self._refill()
            take = min(n - filled, len(self._buf) - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
        return out.reshape(shape)

    def normal(self, size=None):
        """Standard normal draw(s) via the inverse CDF."""
        return ndtri(self.uniform(size))

    def exponential(self, rate: float) -> float:
        """One exponential holding time with the given rate."""
        return -math.log(self.uniform()) / rate

    def integers(self, n: int, size=None):
        """Uniform integer draw(s) in [0, n)."""
        if size is None:
            return min(int(self.uniform() * n), n - 1)
        idx = (self.uniform(size) * n).astype(np.int64)
        return np.minimum(idx, n - 1)

    def spawn(self, offset: int) -> "RandomStream":
        """Stream for replica ``offset`` relative to this stream's seed."""
        return RandomStream(self.seed + offset)
