"""Alignment quality on the mutual coverage of two same-canvas images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyOverlap
from .image import Image

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    evaluated_pixels: int


def _mutual(a: Image, b: Image) -> np.ndarray:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError("images must share dimensions")
    m = a.coverage & b.coverage
    if not m.any():
        raise EmptyOverlap("no mutually covered pixel")
    return m


def psnr_overlap(a: Image, b: Image) -> float:
    """10 log10(255^2 / MSE) over RGB on mutually covered pixels, capped at 99."""
    m = _mutual(a, b)
    da = a.pixels[m].astype(float)
    db = b.pixels[m].astype(float)
    mse = float(np.mean((da - db) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(255.0**2 / mse), PSNR_CAP))


def _luma(img: Image) -> np.ndarray:
    p = img.pixels.astype(float)
    return 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2 * sigma**2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim_overlap(a: Image, b: Image) -> float:
    """Single-scale SSIM on luma over windows fully inside the mutual coverage."""
    m = _mutual(a, b)
    half = SSIM_WINDOW // 2
    valid = ndimage.binary_erosion(
        m, structure=np.ones((SSIM_WINDOW, SSIM_WINDOW), dtype=bool)
    )
    # erosion with the full window keeps centers whose window fits in coverage;
    # also drop centers too close to the array border
    valid[:half, :] = False
    valid[-half:, :] = False
    valid[:, :half] = False
    valid[:, -half:] = False
    if not valid.any():
        raise EmptyOverlap("mutual coverage holds no full SSIM window")

    la = _luma(a)
    lb = _luma(b)
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)

    def f(x):
        return ndimage.correlate(x, k, mode="constant")

    mu_a = f(la)
    mu_b = f(lb)
    va = f(la * la) - mu_a * mu_a
    vb = f(lb * lb) - mu_b * mu_b
    cov = f(la * lb) - mu_a * mu_b
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (va + vb + c2)
    smap = num / den
    return float(smap[valid].mean())


def metric_report(a: Image, b: Image) -> MetricReport:
    m = _mutual(a, b)
    return MetricReport(
        psnr=psnr_overlap(a, b), ssim=ssim_overlap(a, b), evaluated_pixels=int(m.sum())
    )
