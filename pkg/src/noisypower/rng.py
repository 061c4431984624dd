"""Counter-based random source.

Every draw is addressed by ``(seed, stream, position)``: the key of a
Philox4x64 generator is derived from the seed and the stream labels, and the
position selects the counter block.  Any slice of a stream can therefore be
regenerated on its own, in any order, and byte-identically on any platform.

Normals are produced by inverse-CDF transform of 53-bit uniforms so that one
normal consumes exactly one 64-bit word.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

ALGORITHM = "philox4x64/ndtri/v1"

_WORDS_PER_BLOCK = 4


def _label(x: int | str) -> int:
    if isinstance(x, str):
        return zlib.crc32(x.encode("utf-8"))
    if x < 0:
        raise ValueError(f"stream labels must be non-negative, got {x}")
    return int(x)


@dataclass(frozen=True)
class RandomSource:
    """Reproducible stream of random words keyed by a 64-bit seed.

    ``child(*labels)`` derives an independent sub-stream; labels may be
    non-negative ints or strings.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def algorithm(self) -> str:
        return ALGORITHM

    def child(self, *labels: int | str) -> "RandomSource":
        return RandomSource(self.seed, self.stream + tuple(_label(x) for x in labels))

    def _key(self) -> int:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        lo, hi = ss.generate_state(2, np.uint64)
        return int(lo) | (int(hi) << 64)

    def raw(self, start: int, count: int) -> np.ndarray:
        """Words ``[start, start + count)`` of this stream as uint64."""
        if start < 0 or count < 0:
            raise ValueError("start and count must be non-negative")
        block, skip = divmod(start, _WORDS_PER_BLOCK)
        bitgen = np.random.Philox(key=self._key(), counter=block)
        return bitgen.random_raw(skip + count)[skip:]

    def uniform(self, start: int, count: int) -> np.ndarray:
        words = self.raw(start, count)
        return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, shape: int | tuple[int, ...], start: int = 0) -> np.ndarray:
        """Standard normals filling ``shape`` (row-major) from word ``start``."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        return ndtri(self.uniform(start, count)).reshape(shape)


def as_source(rng: RandomSource | int) -> RandomSource:
    return rng if isinstance(rng, RandomSource) else RandomSource(int(rng))
