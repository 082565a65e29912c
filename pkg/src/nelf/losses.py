"""Training losses: photometric, Fourier sparsity (spectral), and ray bundle.

Each loss returns (value, analytic gradient w.r.t. the network outputs that
feed it). Values are accumulated in float64 regardless of training dtype.

The spectral loss carries its own 2D FFT (iterative radix-2 Cooley-Tukey,
unnormalized, e^{-2 pi i} sign convention, power-of-two sizes only) so the
loss math is self-contained and testable against a naive DFT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidHyperparam, NonPowerOfTwo, ShapeMismatch
from .geometry import Ray, unit

# Magnitudes below this are treated as zero when differentiating |X|.
_MAG_EPS = 1e-12

DEFAULT_LAMBDA_S = 1.92
DEFAULT_LAMBDA_R = 0.074
DEFAULT_BUNDLE_SIZE = 16
DEFAULT_THETA_DEG = 1.5


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = DEFAULT_LAMBDA_S
    lambda_r: float = DEFAULT_LAMBDA_R

    def __post_init__(self):
        if self.lambda_s < 0 or self.lambda_r < 0:
            raise InvalidHyperparam("loss weights must be non-negative")


@dataclass(frozen=True)
class BundleConfig:
    T: int = DEFAULT_BUNDLE_SIZE
    theta_deg: float = DEFAULT_THETA_DEG

    def __post_init__(self):
        if self.T < 1:
            raise InvalidHyperparam(f"bundle size T must be >= 1, got {self.T}")
        if not (self.theta_deg > 0):
            raise InvalidHyperparam(f"theta_deg must be > 0, got {self.theta_deg}")


# ---------------------------------------------------------------------------
# Photometric loss


def photometric_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum over samples of the L2 norm of the RGB residual.

    Gradient is the exact subgradient, 0 where a residual is exactly 0.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeMismatch(f"expected matching Nx3 arrays, got {pred.shape} vs {target.shape}")
    r = pred.astype(np.float64) - target.astype(np.float64)
    norms = np.linalg.norm(r, axis=1)
    value = float(norms.sum())
    safe = np.where(norms > 0, norms, 1.0)
    grad = np.where(norms[:, None] > 0, r / safe[:, None], 0.0)
    return value, grad


# ---------------------------------------------------------------------------
# 2D FFT (self-contained)


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_last_axis(a: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT along the last axis; length must be 2^k."""
    n = a.shape[-1]
    if n & (n - 1) or n == 0:
        raise NonPowerOfTwo(f"FFT length must be a power of two, got {n}")
    out = np.ascontiguousarray(a[..., _bit_reverse_indices(n)], dtype=np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        view = out.reshape(out.shape[:-1] + (n // m, m))
        even = view[..., :half]
        odd = view[..., half:] * tw
        view[..., half:] = even - odd
        view[..., :half] += odd
        m *= 2
    return out


def fft2d(image_channel: np.ndarray) -> np.ndarray:
    """Unnormalized 2D DFT of trailing (R, R) axes, e^{-2 pi i} convention."""
    a = np.asarray(image_channel)
    if a.shape[-1] != a.shape[-2]:
        raise ShapeMismatch(f"expected square trailing axes, got {a.shape}")
    rows = _fft_last_axis(a)
    return _fft_last_axis(rows.swapaxes(-1, -2)).swapaxes(-1, -2)


def _dft2_adjoint(y: np.ndarray) -> np.ndarray:
    # Adjoint of the unnormalized DFT: F^H y = conj(F conj(y)).
    return np.conj(fft2d(np.conj(y)))


def magnitude_spectrum(image: np.ndarray) -> np.ndarray:
    """Per-channel |fft2d| of an (R, R, C) image, same shape, real."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return np.abs(fft2d(img))
    if img.ndim != 3:
        raise ShapeMismatch(f"expected (R, R, C) image, got shape {img.shape}")
    spec = np.abs(fft2d(np.moveaxis(img, -1, 0)))
    return np.moveaxis(spec, 0, -1)


def area_downsample(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact box-filter resample of an (H, W, C) or (H, W) image."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[0], img.shape[1]

    def weights(n_in: int, n_out: int) -> np.ndarray:
        # W[o, i] = overlap of output cell o with input pixel i, normalized.
        scale = n_in / n_out
        mat = np.zeros((n_out, n_in))
        for o in range(n_out):
            lo, hi = o * scale, (o + 1) * scale
            i0, i1 = int(np.floor(lo)), int(np.ceil(hi))
            for i in range(i0, min(i1, n_in)):
                mat[o, i] = min(hi, i + 1) - max(lo, i)
        return mat / scale

    wy = weights(h, out_h)
    wx = weights(w, out_w)
    flat = img.reshape(h, w, -1)
    out = np.einsum("oi,iwc,pw->opc", wy, flat, wx)
    return out.reshape((out_h, out_w) + img.shape[2:])


@dataclass(eq=False)
class SpectrumRef:
    """Cached magnitude spectra of the training images at loss resolution."""

    spectra: np.ndarray  # (M, R, R, C)
    R: int

    def __post_init__(self):
        self.spectra = np.asarray(self.spectra, dtype=np.float64)
        if self.spectra.ndim != 4 or self.spectra.shape[1] != self.R \
                or self.spectra.shape[2] != self.R:
            raise ShapeMismatch(f"spectra shape {self.spectra.shape} inconsistent with R={self.R}")

    @classmethod
    def from_images(cls, images, R: int) -> "SpectrumRef":
        if R & (R - 1) or R < 1:
            raise NonPowerOfTwo(f"loss resolution must be a power of two, got {R}")
        if len(images) == 0:
            raise ShapeMismatch("need at least one reference image")
        spectra = [magnitude_spectrum(area_downsample(img, R, R)) for img in images]
        return cls(np.stack(spectra), R)


def fourier_sparsity_loss(rendered: np.ndarray, refs: SpectrumRef) -> tuple[float, np.ndarray]:
    """Sum over references and channels of ||spec(rendered) - spec(ref)||_F.

    The pixel gradient goes through |X| -> X/|X| (zero below 1e-12) and the
    DFT adjoint.
    """
    img = np.asarray(rendered, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != refs.R or img.shape[1] != refs.R \
            or img.shape[2] != refs.spectra.shape[3]:
        raise ShapeMismatch(f"rendered shape {img.shape} does not match references "
                            f"{refs.spectra.shape[1:]}")
    X = fft2d(np.moveaxis(img, -1, 0))  # (C, R, R) complex
    A = np.abs(X)
    diff = A[None] - np.moveaxis(refs.spectra, -1, 1)  # (M, C, R, R)
    fro = np.sqrt(np.sum(diff * diff, axis=(2, 3)))  # (M, C)
    value = float(fro.sum())
    safe = np.where(fro > 0, fro, 1.0)
    g_mag = np.where(fro[..., None, None] > 0, diff / safe[..., None, None], 0.0).sum(axis=0)
    live = A >= _MAG_EPS
    phase = np.where(live, X / np.where(live, A, 1.0), 0.0)
    grad = np.real(_dft2_adjoint(g_mag * phase))
    return value, np.moveaxis(grad, 0, -1)


# ---------------------------------------------------------------------------
# Ray bundle loss


def _perp_frame(dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors orthogonal to each direction (and to each other)."""
    dirs = np.atleast_2d(dirs)
    seed = np.eye(3)[np.argmin(np.abs(dirs), axis=-1)]
    e1 = unit(np.cross(dirs, seed))
    e2 = np.cross(dirs, e1)
    return e1, e2


def sample_bundle_angles(n: int, theta_deg: float, rng) -> np.ndarray:
    """n positive polar angles (degrees): N(0, theta^2) with negatives rejected."""
    out = np.empty(0)
    while out.size < n:
        draws = rng.normal(2 * (n - out.size), sigma=theta_deg)
        out = np.concatenate([out, draws[draws > 0]])
    return out[:n]


def sample_bundles_batch(origins: np.ndarray, dirs: np.ndarray, cfg: BundleConfig,
                         rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """T perturbed rays around each center ray.

    Returns (origins (N,T,3), directions (N,T,3), weights (N,T)); weights are
    exp(-angle/theta), in (0, 1].
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n, t = origins.shape[0], cfg.T
    angles = sample_bundle_angles(n * t, cfg.theta_deg, rng).reshape(n, t)
    azimuth = (rng.uniform(n * t) * 2.0 * np.pi).reshape(n, t)
    e1, e2 = _perp_frame(dirs)
    rad = np.radians(angles)[..., None]
    lateral = np.cos(azimuth)[..., None] * e1[:, None] + np.sin(azimuth)[..., None] * e2[:, None]
    new_dirs = np.cos(rad) * dirs[:, None] + np.sin(rad) * lateral
    new_dirs = unit(new_dirs)
    weights = np.exp(-angles / cfg.theta_deg)
    return np.broadcast_to(origins[:, None], new_dirs.shape).copy(), new_dirs, weights


def sample_bundle(center: Ray, cfg: BundleConfig, rng) -> list[tuple[Ray, float]]:
    """T (ray, weight) pairs around a single center ray, sharing its origin."""
    o, d, w = sample_bundles_batch(center.origin[None], center.direction[None], cfg, rng)
    return [(Ray(o[0, i], d[0, i]), float(w[0, i])) for i in range(cfg.T)]


def ray_bundle_loss_batch(center_preds: np.ndarray, bundle_preds: np.ndarray,
                          weights: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted color-consistency loss over N bundles at once.

    value = sum_{n,i} w_{n,i} ||c_n - b_{n,i}||_2; gradients to both ends.
    """
    c = np.asarray(center_preds, dtype=np.float64)
    b = np.asarray(bundle_preds, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if c.ndim != 2 or b.ndim != 3 or b.shape[0] != c.shape[0] or b.shape[2] != c.shape[1] \
            or w.shape != b.shape[:2]:
        raise ShapeMismatch(f"inconsistent bundle shapes: centers {c.shape}, "
                            f"bundle {b.shape}, weights {w.shape}")
    r = c[:, None] - b  # (N, T, 3)
    norms = np.linalg.norm(r, axis=2)
    value = float(np.sum(w * norms))
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms[..., None] > 0, r / safe[..., None], 0.0)
    grad_bundle = -w[..., None] * unit
    return value, -grad_bundle.sum(axis=1), grad_bundle


def ray_bundle_loss(center_pred: np.ndarray, bundle_preds: np.ndarray,
                    weights: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Single-bundle form of ray_bundle_loss_batch."""
    value, gc, gb = ray_bundle_loss_batch(np.asarray(center_pred)[None],
                                          np.asarray(bundle_preds)[None],
                                          np.asarray(weights)[None])
    return value, gc[0], gb[0]


def total_loss(lp: float, ls: float, lr: float,
               weights: LossWeights = LossWeights()) -> float:
    return lp + weights.lambda_s * ls + weights.lambda_r * lr
