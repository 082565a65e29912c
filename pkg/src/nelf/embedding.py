"""Gaussian Fourier feature embedding of 4D ray coordinates.

A coordinate v in R^4 is lifted to

    gamma(v) = (cos(2 pi b_1 . v), sin(2 pi b_1 . v), ..., cos(2 pi b_L . v), sin(2 pi b_L . v))

where the rows b_l of the frequency matrix B are drawn once from N(0, sigma^2)
and frozen: B is never trained, and it is stored inside checkpoints so a saved
model never depends on RNG reproducibility.

Sampling procedure (fixed, platform-independent): Philox counter-based uniforms
fed through Box-Muller (see rng.DeterministicRng.normal), scaled by sigma, then
rounded to float32 precision so the checkpoint encoding is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidHyperparam
from .rng import DeterministicRng

DEFAULT_SIGMA = 16.0
DEFAULT_NUM_FREQUENCIES = 256

# Stream id namespacing the embedding draw within a shared seed.
EMBEDDING_STREAM = 7


@dataclass(eq=False, frozen=True)
class EmbeddingMatrix:
    """Frozen frequency matrix; rows are the b_l of the embedding."""

    B: np.ndarray  # (L, 4) float64, entries exactly representable in float32
    sigma: float
    L: int
    seed: int

    @property
    def output_dim(self) -> int:
        return 2 * self.L


def make_embedding(sigma: float = DEFAULT_SIGMA, L: int = DEFAULT_NUM_FREQUENCIES,
                   seed: int = 0) -> EmbeddingMatrix:
    """Sample a frequency matrix. Same (sigma, L, seed) always gives the same B."""
    if not (sigma > 0):
        raise InvalidHyperparam(f"sigma must be > 0, got {sigma}")
    if L < 1:
        raise InvalidHyperparam(f"L must be >= 1, got {L}")
    rng = DeterministicRng(seed, stream=EMBEDDING_STREAM)
    draws = rng.normal(4 * L, sigma=float(sigma))
    B = draws.reshape(L, 4).astype(np.float32).astype(np.float64)
    return EmbeddingMatrix(B=B, sigma=float(sigma), L=int(L), seed=int(seed))


def embed_batch(coords: np.ndarray, emb: EmbeddingMatrix,
                dtype=np.float64) -> np.ndarray:
    """Embed (..., 4) coordinates to (..., 2L), cos/sin interleaved."""
    coords = np.asarray(coords, dtype=dtype)
    B_t = (2.0 * np.pi * emb.B.T).astype(dtype)
    phase = coords @ B_t
    out = np.empty(phase.shape[:-1] + (2 * emb.L,), dtype=dtype)
    out[..., 0::2] = np.cos(phase)
    out[..., 1::2] = np.sin(phase)
    return out


def embed(coord, emb: EmbeddingMatrix) -> np.ndarray:
    """Embedding of a single coordinate; length 2L, components in [-1, 1]."""
    v = coord.as_array() if hasattr(coord, "as_array") else np.asarray(coord, dtype=np.float64)
    return embed_batch(v.reshape(4), emb)


def embed_jacobian(coord, emb: EmbeddingMatrix) -> np.ndarray:
    """d embed / d v as a (2L, 4) matrix.

    Row 2l   (cos component): -sin(2 pi b_l . v) * 2 pi b_l
    Row 2l+1 (sin component):  cos(2 pi b_l . v) * 2 pi b_l
    """
    v = coord.as_array() if hasattr(coord, "as_array") else np.asarray(coord, dtype=np.float64)
    v = v.reshape(4)
    two_pi_b = 2.0 * np.pi * emb.B  # (L, 4)
    phase = two_pi_b @ v
    jac = np.empty((2 * emb.L, 4), dtype=np.float64)
    jac[0::2] = -np.sin(phase)[:, None] * two_pi_b
    jac[1::2] = np.cos(phase)[:, None] * two_pi_b
    return jac
