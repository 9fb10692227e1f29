"""Counter-based random draws keyed by (seed, purpose, index).

Every draw is a pure hash of its key, so per-voxel randomness does not depend
on iteration order or on how many other draws were made.
"""

import zlib

import numpy as np

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    # splitmix64 finalizer
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def hash64(seed: int, tag: str, index) -> np.ndarray:
    """64-bit hash of every counter in ``index`` under key (seed, tag)."""
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        key = _mix(key ^ (np.uint64(tag_id(tag)) * _GOLDEN))
        return _mix(key + (index + np.uint64(1)) * _GOLDEN)


def uniform(seed: int, tag: str, index) -> np.ndarray:
    """Uniform floats in [0, 1), one per counter."""
    return (hash64(seed, tag, index) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def integers(seed: int, tag: str, index, high: int) -> np.ndarray:
    """Integers in [0, high) (multiply-shift on 53-bit uniforms)."""
    return np.minimum((uniform(seed, tag, index) * high).astype(np.int64), high - 1)


def generator(seed: int, tag: str) -> np.random.Generator:
    """Sequential stream for non-per-voxel randomness (object placement, init)."""
    return np.random.Generator(np.random.Philox(key=int(hash64(seed, tag, 0))))
