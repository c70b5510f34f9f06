"""PSNR / SSIM on the luma channel, with border cropping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Y_COEFFS = np.array([65.481, 128.553, 24.966])  # BT.601 studio swing, inputs scaled to [0,1]
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass(frozen=True)
class QualityScore:
    psnr_db: float
    ssim: float

    def __str__(self) -> str:
        return f"PSNR: {self.psnr_db:.2f} dB  SSIM: {self.ssim:.4f}"


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """[3,H,W] in [0,255] -> [1,H,W] luma in [16,235]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a [3,H,W] image, got {img.shape}")
    y = np.tensordot(Y_COEFFS, img / 255.0, axes=([0], [0])) + 16.0
    return y[None]


def crop_border(img: np.ndarray, crop: int) -> np.ndarray:
    if crop <= 0:
        return img
    if img.shape[-2] <= 2 * crop or img.shape[-1] <= 2 * crop:
        raise ValueError(f"crop {crop} leaves nothing of a {img.shape[-2:]} image")
    return img[..., crop:-crop, crop:-crop]


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 255.0, crop: int = 0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a, b = crop_border(a, crop), crop_border(b, crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=-2) @ g
    return sliding_window_view(rows, k, axis=-1) @ g


def ssim_map(a: np.ndarray, b: np.ndarray, max_val: float = 255.0) -> np.ndarray:
    """Local SSIM over 11x11 Gaussian windows (sigma 1.5), valid region only."""
    g = gaussian_window()
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 255.0, crop: int = 0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a, b = crop_border(a, crop), crop_border(b, crop)
    if a.shape[-1] < 11 or a.shape[-2] < 11:
        raise ValueError(f"SSIM needs at least 11x11 pixels after cropping, got {a.shape[-2:]}")
    return float(ssim_map(a, b, max_val).mean())


def score_y(sr: np.ndarray, hr: np.ndarray, crop: int = 0) -> QualityScore:
    """Both [3,H,W] RGB in [0,255]; metrics on the luma channel."""
    ya, yb = rgb_to_y(sr)[0], rgb_to_y(hr)[0]
    return QualityScore(psnr(ya, yb, crop=crop), ssim(ya, yb, crop=crop))
