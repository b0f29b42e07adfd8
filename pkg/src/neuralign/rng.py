"""Seeded random number generation with serializable state.

All stochastic behavior in the engine (parameter init, batch shuffling,
dropout masks, synthetic data) flows through a single `Rng` so that a run
is fully determined by its seed. The generator is counter-based (Philox),
which gives platform-independent streams and cheap derivation of
independent substreams for per-layer / per-seed sweep runs.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Counter-based generator wrapping numpy's Philox bit generator.

    Identical seeds produce bit-identical streams on every platform. State
    can be captured and restored exactly, which checkpoint resume relies on.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, *indices: int) -> "Rng":
        """Return an independent substream keyed by (seed, *indices).

        Derivation is pure arithmetic on the key, so substreams do not
        consume or disturb this generator's state.
        """
        key = self.seed
        for ix in indices:
            key = (key * 0x9E3779B97F4A7C15 + int(ix) + 1) % (1 << 64)
        return Rng(key)

    def normal(self, shape, dtype=np.float32) -> np.ndarray:
        out = self._gen.standard_normal(size=shape, dtype=np.float64)
        return out.astype(dtype, copy=False)

    def uniform(self, shape, dtype=np.float32) -> np.ndarray:
        out = self._gen.random(size=shape, dtype=np.float64)
        return out.astype(dtype, copy=False)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def state_dict(self) -> dict:
        """JSON-serializable snapshot of the full generator state."""
        st = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "counter": list(int(c) for c in st["state"]["counter"]),
            "key": list(int(k) for k in st["state"]["key"]),
            "buffer": list(int(b) for b in st["buffer"]),
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "Rng":
        rng = cls(d["seed"])
        st = rng._gen.bit_generator.state
        st["state"]["counter"] = np.array(d["counter"], dtype=np.uint64)
        st["state"]["key"] = np.array(d["key"], dtype=np.uint64)
        st["buffer"] = np.array(d["buffer"], dtype=np.uint64)
        st["buffer_pos"] = d["buffer_pos"]
        st["has_uint32"] = d["has_uint32"]
        st["uinteger"] = d["uinteger"]
        rng._gen.bit_generator.state = st
        return rng
