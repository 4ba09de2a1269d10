"""Deterministic random number streams.

Every stochastic routine in the package draws from an explicit
:class:`RngStream` so that a run is fully reproducible from its seed and so
that replications can use provably disjoint substreams.  The generator
algorithm is fixed (PCG64 behind ``numpy.random.Generator``); changing it
would silently invalidate stored reference output, hence the assert.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALGORITHM = "pcg64"


@dataclass
class RngStream:
    """Seeded random stream with a draw counter.

    Parameters
    ----------
    seed : int
        Base seed, any 64-bit unsigned value.
    path : tuple of int
        Substream derivation path.  ``substream(k)`` appends ``k``; streams
        with different paths are statistically independent.
    """

    seed: int
    path: tuple = ()
    algorithm: str = ALGORITHM
    counter: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported generator algorithm {self.algorithm!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in 64 bits")
        entropy = (int(self.seed),) + tuple(int(k) for k in self.path)
        self._seq = np.random.SeedSequence(entropy)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def substream(self, *keys) -> "RngStream":
        """Derive an independent child stream; deterministic in (seed, path, keys)."""
        return RngStream(self.seed, self.path + tuple(int(k) for k in keys))

    # thin draw wrappers; the counter records how many variate calls were made
    def normal(self, size=None):
        self.counter += 1
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        self.counter += 1
        return self.generator.random(size)

    def gamma(self, shape, scale=1.0, size=None):
        self.counter += 1
        return self.generator.gamma(shape, scale, size)

    def chisquare(self, df, size=None):
        self.counter += 1
        return self.generator.chisquare(df, size)

    def integers(self, low, high=None, size=None):
        self.counter += 1
        return self.generator.integers(low, high, size)
