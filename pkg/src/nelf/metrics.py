"""Image quality metrics (PSNR, SSIM) and test-split evaluation.

PSNR is 10*log10(1/MSE) on [0,1] images; identical images report the +inf
sentinel, written as "inf" in CSV and capped at 100 dB inside mean
aggregates (unless every view is identical, in which case the mean is inf).

SSIM is the standard single-scale variant: 11x11 Gaussian window with
sigma 1.5, C1 = 0.01^2, C2 = 0.03^2 on unit range, computed per channel over
valid (fully covered) windows only, then averaged across channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import EmptySplit, ShapeMismatch, TooSmall
from .renderer import RenderRequest, render

PSNR_CAP_DB = 100.0

_WINDOW = 11
_WINDOW_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; inf for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel() -> np.ndarray:
    x = np.arange(_WINDOW, dtype=np.float64) - (_WINDOW - 1) / 2.0
    k = np.exp(-0.5 * (x / _WINDOW_SIGMA) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    half = _WINDOW // 2
    return out[half:-half, half:-half]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over valid windows, averaged across channels."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < _WINDOW or a.shape[1] < _WINDOW:
        raise TooSmall(f"SSIM needs at least {_WINDOW}x{_WINDOW} images, got "
                       f"{a.shape[1]}x{a.shape[0]}")
    kernel = _gaussian_kernel()
    values = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mu_x = _filter_valid(x, kernel)
        mu_y = _filter_valid(y, kernel)
        xx = _filter_valid(x * x, kernel) - mu_x * mu_x
        yy = _filter_valid(y * y, kernel) - mu_y * mu_y
        xy = _filter_valid(x * y, kernel) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + _C1) * (2.0 * xy + _C2)
        den = (mu_x ** 2 + mu_y ** 2 + _C1) * (xx + yy + _C2)
        values.append(float(np.mean(num / den)))
    return float(np.mean(values))


@dataclass(eq=False)
class EvalReport:
    rows: list  # (view_id, psnr_db, ssim)

    @property
    def mean_psnr(self) -> float:
        vals = [r[1] for r in self.rows]
        if all(math.isinf(v) for v in vals):
            return math.inf
        return float(np.mean([min(v, PSNR_CAP_DB) for v in vals]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def to_csv(self) -> str:
        lines = ["view,psnr_db,ssim"]
        for view_id, p, s in self.rows:
            p_str = "inf" if math.isinf(p) else f"{p:.6f}"
            lines.append(f"{view_id},{p_str},{s:.6f}")
        mean_p = self.mean_psnr
        mean_str = "inf" if math.isinf(mean_p) else f"{mean_p:.6f}"
        lines.append(f"mean,{mean_str},{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(model, manifest, render_fn=None) -> EvalReport:
    """Render every view in `manifest`, score against its stored image.

    `render_fn(pose, width, height) -> image` may replace the default
    renderer (used to evaluate baselines through the same report path).
    """
    from .data import load_image

    if not manifest.views:
        raise EmptySplit("test split contains no views")
    rows = []
    for view in manifest.views:
        reference = load_image(manifest.image_path(view))
        if render_fn is not None:
            rendered = render_fn(view.pose, manifest.width, manifest.height)
        else:
            rendered, _ = render(model, RenderRequest(view.pose, manifest.width,
                                                      manifest.height))
        rows.append((f"view_{view.row:02d}_{view.col:02d}", psnr(rendered, reference),
                     ssim(rendered, reference)))
    return EvalReport(rows=rows)


def write_eval_csv(report: EvalReport, path) -> None:
    with open(str(path), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
