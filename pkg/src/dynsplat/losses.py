"""Training objective: L1 plus a differentiable structural-similarity term."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["l1_loss", "ssim", "render_loss", "gaussian_window"]

_C1 = 0.01**2
_C2 = 0.03**2


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def _blur_matrix(n: int, window: np.ndarray) -> np.ndarray:
    """Band matrix applying the window along one axis with zero padding."""
    size = window.size
    half = size // 2
    mat = np.zeros((n, n))
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        mat[i, lo:hi] = window[lo - i + half: hi - i + half]
    return mat


def _as_image(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim != 3 or t.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {t.shape}")
    return t


def l1_loss(a, b) -> Tensor:
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return ad.absolute(a - b).mean()


def ssim(a, b, window_size: int = 11, sigma: float = 1.5) -> Tensor:
    """Mean SSIM over pixels and channels, differentiable in both images.

    Uses a separable Gaussian window with zero padding (full-map average), so
    identical images score exactly 1.
    """
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    h, w, _ = a.shape
    window = gaussian_window(window_size, sigma)
    row = Tensor(_blur_matrix(h, window))
    col = Tensor(_blur_matrix(w, window).T)

    def blur(x: Tensor) -> Tensor:
        return ad.matmul(ad.matmul(row, x), col)

    scores = []
    for c in range(3):
        x = a[:, :, c]
        y = b[:, :, c]
        mu_x = blur(x)
        mu_y = blur(y)
        sigma_x = blur(x * x) - mu_x * mu_x
        sigma_y = blur(y * y) - mu_y * mu_y
        sigma_xy = blur(x * y) - mu_x * mu_y
        numer = (2.0 * mu_x * mu_y + _C1) * (2.0 * sigma_xy + _C2)
        denom = (mu_x * mu_x + mu_y * mu_y + _C1) * (sigma_x + sigma_y + _C2)
        scores.append((numer / denom).mean())
    total = scores[0] + scores[1] + scores[2]
    return total / 3.0


def render_loss(render, target, lambda_ssim: float = 0.2) -> Tensor:
    """(1 - lambda) * L1 + lambda * (1 - SSIM)."""
    if not (0.0 <= lambda_ssim < 1.0):
        raise ValueError("lambda_ssim must lie in [0, 1)")
    l1 = l1_loss(render, target)
    if lambda_ssim == 0.0:
        return l1
    dssim = 1.0 - ssim(render, target)
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * dssim
