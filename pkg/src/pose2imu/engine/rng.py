"""Named, counter-based random streams.

A stream is keyed by ``(seed, label)``. The key is hashed into a Philox
counter-based generator, so streams with different labels never share draws
and the sequence for a given key is the same on every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    def __init__(self, seed: int, stream: str = "default"):
        self.seed = int(seed)
        self.stream = str(stream)
        digest = hashlib.sha256(f"{self.seed}:{self.stream}".encode()).digest()
        key = np.frombuffer(digest[:16], dtype="<u8").copy()
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, label: str) -> "Rng":
        """Independent stream derived from this one by label."""
        return Rng(self.seed, f"{self.stream}/{label}")

    def normal(self, size, std: float = 1.0, dtype=np.float64) -> np.ndarray:
        return (self._gen.standard_normal(size) * std).astype(dtype, copy=False)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def random(self, size=None, dtype=np.float64) -> np.ndarray:
        return self._gen.random(size, dtype=dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream!r})"
