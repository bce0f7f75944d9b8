"""Image comparison metrics: PSNR, MAE, SSIM (luma, 11x11 Gaussian window)."""
from __future__ import annotations

import numpy as np

PSNR_CAP_DB = 99.0
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
_LUMA = np.array([0.299, 0.587, 0.114])


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all channels; capped at 99 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def mae(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 2-D correlation, valid region only."""
    k = kernel.size
    rows = img.shape[0] - k + 1
    cols = img.shape[1] - k + 1
    tmp = np.zeros((rows, img.shape[1]))
    for i in range(k):
        tmp += kernel[i] * img[i : i + rows]
    out = np.zeros((rows, cols))
    for j in range(k):
        out += kernel[j] * tmp[:, j : j + cols]
    return out


def luma(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=float) @ _LUMA


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity of the luma channels.

    11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2 on a unit
    dynamic range. Images must be at least 11x11.
    """
    a, b = _check_pair(a, b)
    x = luma(a)
    y = luma(b)
    if min(x.shape) < 11:
        raise ValueError("images must be at least 11x11 for SSIM")
    k = _gaussian_kernel()
    mu_x = _filter_valid(x, k)
    mu_y = _filter_valid(y, k)
    xx = _filter_valid(x * x, k) - mu_x * mu_x
    yy = _filter_valid(y * y, k) - mu_y * mu_y
    xy = _filter_valid(x * y, k) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * xy + _SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + _SSIM_C1) * (xx + yy + _SSIM_C2)
    return float(np.mean(num / den))
