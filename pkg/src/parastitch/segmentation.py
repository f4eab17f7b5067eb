"""Target-image content partition: label-map ingestion, normalization, overlap."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyOverlap
from .geometry import Homography
from . import imgio

log = logging.getLogger(__name__)

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
DEFAULT_MIN_CONTENT_AREA = 64


@dataclass(frozen=True)
class LabelMap:
    """Raw per-pixel ids as loaded from file; 0 means unassigned."""

    labels: np.ndarray  # (H, W) uint16/int

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class Content:
    id: int
    pixel_ys: np.ndarray
    pixel_xs: np.ndarray
    area: int
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive


@dataclass(frozen=True)
class ContentPartition:
    """Disjoint cover of the target image by contents with ids 1..M."""

    contents: list[Content]
    pixel_to_content: np.ndarray  # (H, W) int32, values 1..M

    @property
    def count(self) -> int:
        return len(self.contents)

    def content(self, cid: int) -> Content:
        return self.contents[cid - 1]


@dataclass(frozen=True)
class OverlapMask:
    """Per-target-pixel overlap flag plus the overlap subset of each content."""

    mask: np.ndarray  # (H, W) bool
    overlap_contents: dict[int, tuple[np.ndarray, np.ndarray]]  # id -> (ys, xs)


def load_label_map(path: str, expected_dims: tuple[int, int]) -> LabelMap:
    """Load the 16-bit label PNG and validate its dimensions (w, h)."""
    arr = imgio.load_label_png(path)
    imgio.check_dims(arr, expected_dims, "label map")
    return LabelMap(arr)


def normalize_partition(
    raw: LabelMap, min_content_area: int = DEFAULT_MIN_CONTENT_AREA
) -> ContentPartition:
    """Turn a raw label map into a complete disjoint partition.

    Zero pixels become contents via 4-connected components; ids are remapped
    to 1..M in first-appearance (row-major) order; contents below
    min_content_area merge into the neighbor sharing the longest boundary.
    """
    labels = raw.labels.astype(np.int64)
    if (labels == 0).any():
        comp, ncomp = ndimage.label(labels == 0, structure=FOUR_CONN)
        base = labels.max() + 1
        labels = np.where(labels == 0, comp + base - 1, labels)

    labels = _remap_first_appearance(labels)
    labels = _merge_small(labels, min_content_area)
    labels = _remap_first_appearance(labels)
    return _build_partition(labels)


def _remap_first_appearance(labels: np.ndarray) -> np.ndarray:
    flat = labels.ravel()
    _, first_idx = np.unique(flat, return_index=True)
    order = flat[np.sort(first_idx)]  # ids by first appearance
    lut = np.zeros(labels.max() + 1, dtype=np.int32)
    lut[order] = np.arange(1, len(order) + 1)
    return lut[labels]


def _boundary_lengths(labels: np.ndarray, cid: int) -> dict[int, int]:
    """Count 4-adjacent pixel pairs between content cid and each neighbor id."""
    mask = labels == cid
    out: dict[int, int] = {}
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        rolled = np.roll(labels, shift, axis=axis)
        edge = mask.copy()
        # roll wraps around; kill the wrapped border row/col
        if axis == 0:
            idx = 0 if shift == 1 else -1
            edge[idx, :] = False
        else:
            idx = 0 if shift == 1 else -1
            edge[:, idx] = False
        neigh = rolled[edge]
        neigh = neigh[neigh != cid]
        for nid, cnt in zip(*np.unique(neigh, return_counts=True)):
            out[int(nid)] = out.get(int(nid), 0) + int(cnt)
    return out


def _merge_small(labels: np.ndarray, min_area: int) -> np.ndarray:
    if min_area <= 1:
        return labels
    labels = labels.copy()
    while True:
        ids, areas = np.unique(labels, return_counts=True)
        if len(ids) <= 1:
            break
        small = [(a, i) for i, a in zip(ids, areas) if a < min_area]
        if not small:
            break
        _, cid = min(small)
        lengths = _boundary_lengths(labels, int(cid))
        if not lengths:
            break
        target = min(lengths, key=lambda nid: (-lengths[nid], nid))
        labels[labels == cid] = target
    return labels


def _build_partition(labels: np.ndarray) -> ContentPartition:
    labels = labels.astype(np.int32)
    m = int(labels.max())
    contents = []
    for cid in range(1, m + 1):
        ys, xs = np.nonzero(labels == cid)
        contents.append(
            Content(
                id=cid,
                pixel_ys=ys,
                pixel_xs=xs,
                area=len(ys),
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
            )
        )
    labels.setflags(write=False)
    return ContentPartition(contents=contents, pixel_to_content=labels)


def compute_overlap(
    partition: ContentPartition, h_g: Homography, ref_dims: tuple[int, int]
) -> OverlapMask:
    """Classify target pixels by whether H_g maps them inside the reference."""
    h, w = partition.pixel_to_content.shape
    rw, rh = ref_dims
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    mapped = h_g.apply(pts)
    inside = (
        (mapped[:, 0] >= 0)
        & (mapped[:, 0] < rw)
        & (mapped[:, 1] >= 0)
        & (mapped[:, 1] < rh)
    )
    mask = inside.reshape(h, w)
    if not mask.any():
        raise EmptyOverlap("no target pixel maps inside the reference frame")
    overlap_contents = {}
    for c in partition.contents:
        sel = mask[c.pixel_ys, c.pixel_xs]
        if sel.any():
            overlap_contents[c.id] = (c.pixel_ys[sel], c.pixel_xs[sel])
    return OverlapMask(mask=mask, overlap_contents=overlap_contents)


def assign_points_to_contents(partition: ContentPartition, matches) -> np.ndarray:
    """Content id of the pixel under each target point (floor convention).

    Out-of-bounds points get id 0 and are logged; callers treat 0 as dropped.
    """
    h, w = partition.pixel_to_content.shape
    xs = np.floor(matches.target[:, 0]).astype(int)
    ys = np.floor(matches.target[:, 1]).astype(int)
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    ids = np.zeros(len(xs), dtype=np.int32)
    ids[ok] = partition.pixel_to_content[ys[ok], xs[ok]]
    n_bad = int((~ok).sum())
    if n_bad:
        log.warning("%d target points outside image bounds were dropped", n_bad)
    return ids
