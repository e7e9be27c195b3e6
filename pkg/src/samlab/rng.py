"""Counter-based random streams.

A stream is identified by ``(run_seed, step, purpose)``. Drawing from one
stream never advances another, so e.g. switching SAM on does not shift the
data order of a run.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def purpose_tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(run_seed: int, step: int, purpose: str) -> np.random.Generator:
    """Fresh Philox generator for one (seed, step, purpose) cell."""
    if run_seed < 0 or step < 0:
        raise ValueError("run_seed and step must be non-negative")
    ss = np.random.SeedSequence([int(run_seed), int(step), purpose_tag(purpose)])
    return np.random.Generator(np.random.Philox(ss))


def splitmix64(x: np.ndarray) -> np.ndarray:
    """Vectorised SplitMix64 finaliser over uint64 input."""
    z = np.asarray(x, dtype=np.uint64).copy()
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z & _MASK


def index_hash(seed: int, n: int) -> np.ndarray:
    """Hash of (seed, i) for i in range(n); independent of n for each i."""
    key = splitmix64(np.array([seed], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        return splitmix64(np.arange(n, dtype=np.uint64) ^ key)
