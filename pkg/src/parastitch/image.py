"""RGB image with an optional validity mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Image:
    """RGB uint8 pixels plus a per-pixel coverage flag.

    Pixels with coverage False contribute to no metric or blend.
    """

    pixels: np.ndarray  # (H, W, 3) uint8
    coverage: np.ndarray = None  # (H, W) bool

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must be (H, W, 3)")
        if self.coverage is None:
            self.coverage = np.ones(self.pixels.shape[:2], dtype=bool)
        else:
            self.coverage = np.asarray(self.coverage, dtype=bool)
            if self.coverage.shape != self.pixels.shape[:2]:
                raise ValueError("coverage shape mismatch")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def sample_bilinear(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinear samples at float coords; returns (values, valid mask).

    Valid means the sample point lies inside [0, w-1] x [0, h-1].
    """
    h, w = pixels.shape[:2]
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    eps = 1e-9  # tolerate float jitter at the exact domain boundary
    valid = (xs >= -eps) & (xs <= w - 1 + eps) & (ys >= -eps) & (ys <= h - 1 + eps)
    valid &= np.isfinite(xs) & np.isfinite(ys)
    xc = np.clip(np.where(valid, xs, 0.0), 0, w - 1)
    yc = np.clip(np.where(valid, ys, 0.0), 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(int), w - 2) if w > 1 else np.zeros_like(xc, int)
    y0 = np.minimum(np.floor(yc).astype(int), h - 2) if h > 1 else np.zeros_like(yc, int)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    p = pixels.astype(np.float64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v = (
        p[y0, x0] * (1 - fx) * (1 - fy)
        + p[y0, x1] * fx * (1 - fy)
        + p[y1, x0] * (1 - fx) * fy
        + p[y1, x1] * fx * fy
    )
    return v, valid
