"""Image-quality metrics (value-level, no gradients)."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .losses import ssim

__all__ = ["psnr", "ssim_metric"]

PSNR_CAP = 100.0


def psnr(image, reference) -> float:
    """Peak signal-to-noise ratio on [0, 1] images, capped at 100 dB."""
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise ValueError(f"image dimensions differ: {image.shape} vs {reference.shape}")
    mse = np.mean((image - reference) ** 2)
    if mse <= 0.0:
        return PSNR_CAP
    return float(min(-10.0 * np.log10(mse), PSNR_CAP))


def ssim_metric(image, reference) -> float:
    return float(ssim(Tensor(np.asarray(image)), Tensor(np.asarray(reference))).item())
