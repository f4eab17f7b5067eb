"""File formats: RGB(A) PNG images, 16-bit label maps, plain-text match files."""

from __future__ import annotations

import os

import cv2
import numpy as np

from .errors import DecodeError, DimensionMismatch
from .geometry import MatchSet


def load_image(path: str):
    """Read an image as RGB uint8 plus a coverage mask (alpha > 0 when present)."""
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DecodeError(f"cannot decode image: {path}")
    if raw.ndim == 2:
        rgb = np.repeat(raw[:, :, None], 3, axis=2)
        coverage = np.ones(raw.shape, dtype=bool)
    elif raw.shape[2] == 3:
        rgb = raw[:, :, ::-1]
        coverage = np.ones(raw.shape[:2], dtype=bool)
    elif raw.shape[2] == 4:
        rgb = raw[:, :, 2::-1]
        coverage = raw[:, :, 3] > 0
    else:
        raise DecodeError(f"unsupported channel count in {path}")
    return np.ascontiguousarray(rgb.astype(np.uint8)), coverage


def save_image(path: str, rgb: np.ndarray, coverage: np.ndarray | None = None) -> None:
    """Write RGB uint8; coverage (if given) becomes the alpha channel."""
    _ensure_dir(path)
    bgr = np.ascontiguousarray(rgb[:, :, ::-1])
    if coverage is not None:
        alpha = (coverage.astype(np.uint8)) * 255
        bgr = np.dstack([bgr, alpha])
    if not cv2.imwrite(path, bgr):
        raise IOError(f"failed to write {path}")


def load_label_png(path: str) -> np.ndarray:
    """Read a 16-bit single-channel PNG as a uint16 array."""
    if not os.path.exists(path):
        raise DecodeError(f"label map not found: {path}")
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DecodeError(f"cannot decode label map: {path}")
    if raw.ndim != 2:
        raise DecodeError(f"label map must be single-channel: {path}")
    return raw.astype(np.uint16)


def save_label_png(path: str, labels: np.ndarray) -> None:
    _ensure_dir(path)
    if labels.max() > np.iinfo(np.uint16).max:
        raise ValueError("label ids exceed 16-bit range")
    if not cv2.imwrite(path, labels.astype(np.uint16)):
        raise IOError(f"failed to write {path}")


def load_matches(path: str) -> MatchSet:
    """Parse the 'x_t y_t x_r y_r' per-line match file ('#' starts a comment)."""
    rows = []
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 4:
                    raise DecodeError(f"{path}:{ln}: expected 4 numbers")
                rows.append([float(v) for v in parts])
    except OSError as exc:
        raise DecodeError(f"cannot read matches: {path}") from exc
    except ValueError as exc:
        raise DecodeError(f"bad number in {path}") from exc
    if not rows:
        raise DecodeError(f"no matches in {path}")
    arr = np.asarray(rows)
    return MatchSet(arr[:, :2], arr[:, 2:])


def save_matches(path: str, matches: MatchSet) -> None:
    _ensure_dir(path)
    with open(path, "w") as fh:
        fh.write("# x_t y_t x_r y_r\n")
        for (xt, yt), (xr, yr) in zip(matches.target, matches.ref):
            fh.write(f"{xt:.6f} {yt:.6f} {xr:.6f} {yr:.6f}\n")


def check_dims(arr: np.ndarray, expected_wh: tuple[int, int], what: str) -> None:
    h, w = arr.shape[:2]
    if (w, h) != tuple(expected_wh):
        raise DimensionMismatch(
            f"{what}: got {w}x{h}, expected {expected_wh[0]}x{expected_wh[1]}"
        )


def _ensure_dir(path: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
