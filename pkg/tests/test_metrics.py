"""Image metrics against closed forms and an independent SSIM implementation."""
import math

import numpy as np
import pytest

from fpoctree.metrics import luma, mae, psnr, ssim


def test_identical_images():
    img = np.random.default_rng(1).random((16, 16, 3))
    assert psnr(img, img) == 99.0
    assert mae(img, img) == 0.0
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)


def test_black_vs_white():
    a = np.zeros((8, 8, 3))
    b = np.ones((8, 8, 3))
    assert psnr(a, b) == pytest.approx(0.0, abs=1e-12)
    assert mae(a, b) == pytest.approx(1.0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))
    with pytest.raises(ValueError):
        mae(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ValueError):
        ssim(np.zeros((16, 16, 3)), np.zeros((16, 17, 3)))


def test_psnr_mae_against_direct_formulas():
    rng = np.random.default_rng(2)
    a = rng.random((24, 24, 3))
    b = rng.random((24, 24, 3))
    mse = np.mean((a - b) ** 2)
    assert psnr(a, b) == pytest.approx(10.0 * math.log10(1.0 / mse), abs=1e-6)
    assert mae(a, b) == pytest.approx(float(np.mean(np.abs(a - b))), abs=1e-6)


def ssim_oracle(a, b):
    """Second implementation, straight from the published formula with loops."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    x = luma(a)
    y = luma(b)
    half = 5
    offs = np.arange(-half, half + 1)
    w1d = np.exp(-0.5 * (offs / 1.5) ** 2)
    w1d /= w1d.sum()
    w = np.outer(w1d, w1d)
    vals = []
    for i in range(half, x.shape[0] - half):
        for j in range(half, x.shape[1] - half):
            px = x[i - half : i + half + 1, j - half : j + half + 1]
            py = y[i - half : i + half + 1, j - half : j + half + 1]
            mx = float((w * px).sum())
            my = float((w * py).sum())
            vx = float((w * px * px).sum()) - mx * mx
            vy = float((w * py * py).sum()) - my * my
            cxy = float((w * px * py).sum()) - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(vals))


def test_ssim_against_oracle():
    rng = np.random.default_rng(3)
    base = rng.random((20, 22, 3))
    noisy = np.clip(base + rng.normal(scale=0.1, size=base.shape), 0, 1)
    assert ssim(base, noisy) == pytest.approx(ssim_oracle(base, noisy), abs=1e-4)
    assert ssim(base, base) == pytest.approx(1.0, abs=1e-9)


def test_ssim_degrades_with_noise():
    rng = np.random.default_rng(4)
    base = np.tile(np.linspace(0, 1, 32)[:, None, None], (1, 32, 3))
    light = np.clip(base + rng.normal(scale=0.02, size=base.shape), 0, 1)
    heavy = np.clip(base + rng.normal(scale=0.3, size=base.shape), 0, 1)
    assert ssim(base, light) > ssim(base, heavy)
