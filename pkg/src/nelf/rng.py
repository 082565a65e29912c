"""Deterministic, resumable random streams.

All randomness in this package flows through counter-based Philox streams.
A stream is identified by (seed, stream_id); its full position is a small
state dict that serializes to JSON, which is what makes bit-identical
interrupt-and-resume possible.

Gaussian variates are produced by an explicit Box-Muller transform over the
raw 64-bit Philox output, so the exact values depend only on the Philox bit
stream (stable across platforms and numpy releases), not on any library
distribution method.
"""

from __future__ import annotations

import numpy as np

_INV_2_53 = float(2.0**-53)


class DeterministicRng:
    """A named Philox stream with uniform and Box-Muller normal draws."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._bg = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words from the stream."""
        return self._bg.random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1), from the top 53 bits of each word."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def _uniform_open(self, n: int) -> np.ndarray:
        # (0, 1]: safe as a log() argument.
        return ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53

    def normal(self, n: int, sigma: float = 1.0) -> np.ndarray:
        """n standard-normal doubles (scaled by sigma) via Box-Muller.

        Consumes 2*ceil(n/2) raw words; the spare variate of an odd request
        is discarded rather than cached, so the stream state stays a pure
        function of the total draws requested.
        """
        pairs = (n + 1) // 2
        u1 = self._uniform_open(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(ang)
        z[1::2] = r * np.sin(ang)
        return sigma * z[:n]

    def get_state(self) -> dict:
        """JSON-serializable snapshot of the stream position."""
        st = self._bg.state
        return {
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(x) for x in st["state"]["counter"]],
            "key": [int(x) for x in st["state"]["key"]],
            "buffer": [int(x) for x in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, snap: dict) -> None:
        """Restore a snapshot taken with get_state()."""
        self.seed = int(snap["seed"])
        self.stream = int(snap["stream"])
        st = self._bg.state
        st["state"]["counter"] = np.array(snap["counter"], dtype=np.uint64)
        st["state"]["key"] = np.array(snap["key"], dtype=np.uint64)
        st["buffer"] = np.array(snap["buffer"], dtype=np.uint64)
        st["buffer_pos"] = snap["buffer_pos"]
        st["has_uint32"] = snap["has_uint32"]
        st["uinteger"] = snap["uinteger"]
        self._bg.state = st


def generator_for(seed: int, *words: int) -> np.random.Generator:
    """A throwaway numpy Generator keyed by (seed, words).

    Used where a one-shot, order-insensitive draw is needed (e.g. the
    per-epoch shuffle permutation, which is regenerated from its key rather
    than carried as state).
    """
    key = np.array([np.uint64(seed)] + [np.uint64(w) for w in words], dtype=np.uint64)
    # Philox keys are two 64-bit words; fold any extras in with xor-shifts.
    folded = np.zeros(2, dtype=np.uint64)
    for i, w in enumerate(key):
        folded[i % 2] ^= (w + np.uint64(0x9E3779B97F4A7C15) * np.uint64(i + 1))
    return np.random.Generator(np.random.Philox(key=folded))
