"""Counter-based random streams.

Every random quantity in the library is addressed, not drawn: a stream is
keyed by (seed, stream id) and a value by its word index inside the stream.
Word ``i`` of a stream is word ``i % 4`` of Philox block ``i // 4``, so any
partition of an index range over workers reproduces the same numbers.
Uniforms consume exactly one 64-bit word each; normals are produced from
uniforms by inverse CDF, so their consumption is fixed too.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

# Named substreams hanging off the single top-level seed.
STREAM_BROWNIAN = 1
STREAM_JUMPS = 2
STREAM_INITIAL = 3
STREAM_ASSUMPTION = 4
STREAM_AUDIT = 5
STREAM_FLOW = 6

_INV_2_53 = 2.0 ** -53

# Inversion is used below this mean; larger means are split in halves until
# every piece is below it (sum of independent Poissons, exact law).
_INVERSION_MEAN_MAX = 10.0


def _key(seed: int, stream: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)])
    return ss.generate_state(2, np.uint64)


class CounterStream:
    """Indexed random source for one (seed, stream id) pair."""

    def __init__(self, seed: int, stream: int):
        self.seed = int(seed)
        self.stream = int(stream)
        self._philox_key = _key(seed, stream)

    def raw(self, start: int, count: int) -> np.ndarray:
        """64-bit words at indices [start, start+count)."""
        if count == 0:
            return np.empty(0, dtype=np.uint64)
        block, offset = divmod(int(start), 4)
        bg = Philox(counter=block, key=self._philox_key)
        n_words = offset + int(count)
        words = bg.random_raw(4 * ((n_words + 3) // 4))
        return words[offset:offset + count]

    def uniforms(self, start: int, count: int) -> np.ndarray:
        """Uniforms strictly inside (0, 1), one word each."""
        w = self.raw(start, count)
        return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53

    def normals(self, start: int, count: int) -> np.ndarray:
        return ndtri(self.uniforms(start, count))

    def poisson(self, start: int, mean: float, count: int) -> np.ndarray:
        """Poisson(mean) counts; consumes ``poisson_words(mean)`` words per
        draw regardless of the realized values."""
        splits = poisson_words(mean)
        u = self.uniforms(start, count * splits)
        if splits == 1:
            return _poisson_inversion(u, mean)
        parts = _poisson_inversion(u, mean / splits)
        return parts.reshape(count, splits).sum(axis=1)


def poisson_words(mean: float) -> int:
    """Words consumed per Poisson draw of the given mean."""
    if mean < 0:
        raise ValueError("Poisson mean must be nonnegative")
    if mean < _INVERSION_MEAN_MAX:
        return 1
    return 1 << math.ceil(math.log2(mean / _INVERSION_MEAN_MAX))


def _poisson_inversion(u: np.ndarray, mean: float) -> np.ndarray:
    """Vectorized CDF inversion. Exact up to a cap whose tail mass is
    below 1e-12 for the means this is used with (< 10)."""
    if mean == 0.0:
        return np.zeros(u.shape, dtype=np.int64)
    out = np.zeros(u.shape, dtype=np.int64)
    pmf = np.full(u.shape, math.exp(-mean))
    cdf = pmf.copy()
    pending = u > cdf
    k = 0
    k_max = int(mean + 12.0 * math.sqrt(mean) + 40.0)
    while pending.any() and k < k_max:
        k += 1
        pmf *= mean / k
        cdf += pmf
        out[pending] = k
        pending = u > cdf
    return out


def generator(seed: int, stream: int) -> np.random.Generator:
    """Bulk generator for uses without a per-index determinism contract
    (assumption sampling boxes, audit replicates)."""
    return np.random.Generator(Philox(key=_key(seed, stream)))
