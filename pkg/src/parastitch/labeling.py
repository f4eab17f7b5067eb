"""Photometric labeling of overlap contents and the extrapolated non-overlap warp."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .errors import DegenerateConfiguration, EmptyRegion
from .geometry import (
    Homography,
    MatchSet,
    Similarity,
    estimate_homography_dlt,
    estimate_similarity,
    homography_point_jacobian,
    refine_homography_lm,
)
from .image import Image, sample_bilinear
from .multifit import ModelSet
from .segmentation import OverlapMask

log = logging.getLogger(__name__)

DEFAULT_CELL_SIZE = 20
DEFAULT_R1 = 50
DEFAULT_R2 = 50
DEFAULT_NU = 5.0


def thread_cap() -> int:
    """Internal parallelism bound, controlled by PARASTITCH_THREADS."""
    try:
        return max(1, int(os.environ.get("PARASTITCH_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class OverlapLabeling:
    """Per-content model choice in the overlap, plus the global warp."""

    global_h: Homography
    content_label: dict[int, int]  # content id -> model index (1-based)
    content_error: dict[int, float]  # content id -> mean photometric error
    pixel_model: np.ndarray  # (H, W) int16; 0 outside the overlap
    models: list  # the Homography list the labels index into


@dataclass
class AnchorSet:
    """Boundary anchor points driving the non-overlap extrapolation."""

    overlap_pts: np.ndarray  # (R1, 2)
    overlap_models: np.ndarray  # (R1,) model index per anchor
    overlap_images: np.ndarray  # (R1, 2) anchor mapped by its homography
    overlap_jacobians: np.ndarray  # (R1, 2, 2)
    outer_pts: np.ndarray  # (R2, 2)
    similarity: Similarity
    nu: float = DEFAULT_NU


@dataclass
class NonOverlapMesh:
    """Grid warp over the non-overlap region; C0 across shared cell edges."""

    cell_size: int
    grid_x: np.ndarray
    grid_y: np.ndarray
    warped: np.ndarray  # (gy, gx, 2)
    cells: list  # (row, col) kept quads
    tri_src: np.ndarray  # (T, 3, 2) target-space triangle vertices
    tri_dst: np.ndarray  # (T, 3, 2) warped triangle vertices


def global_homography(matches: MatchSet) -> Homography:
    """DLT plus LM refinement over all (filtered) matches."""
    h0 = estimate_homography_dlt(matches)
    return refine_homography_lm(h0, matches)


def photometric_error(
    content_pixels: tuple[np.ndarray, np.ndarray],
    h: Homography,
    target: Image,
    reference: Image,
) -> float:
    """Mean RGB distance between the warped reference samples and the target.

    content_pixels is (ys, xs) in the target; pixels whose image falls
    outside the reference are excluded. Returns +inf when nothing samples.
    """
    ys, xs = content_pixels
    if len(ys) == 0:
        return np.inf
    pts = np.column_stack([xs.astype(float), ys.astype(float)])
    mapped = h.apply(pts)
    vals, valid = sample_bilinear(reference.pixels, mapped[:, 0], mapped[:, 1])
    if reference.coverage is not None and not reference.coverage.all():
        ix = np.clip(np.rint(mapped[:, 0]).astype(int), 0, reference.width - 1)
        iy = np.clip(np.rint(mapped[:, 1]).astype(int), 0, reference.height - 1)
        valid &= reference.coverage[iy, ix]
    if not valid.any():
        return np.inf
    tvals = target.pixels[ys[valid], xs[valid]].astype(float)
    d = np.linalg.norm(vals[valid] - tvals, axis=1)
    return float(d.mean())


def label_overlap_contents(
    overlap: OverlapMask,
    models: ModelSet,
    target: Image,
    reference: Image,
    global_h: Homography,
) -> OverlapLabeling:
    """Assign each overlap content the model with the lowest photometric error."""
    if len(models) < 1:
        raise ValueError("need at least one model")
    cids = sorted(overlap.overlap_contents)
    errs = np.full((len(cids), len(models)), np.inf)

    def eval_one(ci, li):
        errs[ci, li] = photometric_error(
            overlap.overlap_contents[cids[ci]], models.models[li], target, reference
        )

    jobs = [(ci, li) for ci in range(len(cids)) for li in range(len(models))]
    cap = thread_cap()
    if cap > 1:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            list(pool.map(lambda t: eval_one(*t), jobs))
    else:
        for ci, li in jobs:
            eval_one(ci, li)

    content_label: dict[int, int] = {}
    content_error: dict[int, float] = {}
    pending = []
    for ci, cid in enumerate(cids):
        row = errs[ci]
        if np.isfinite(row).any():
            li = int(np.argmin(row))  # ties resolve to the lower model index
            content_label[cid] = li + 1
            content_error[cid] = float(row[li])
        else:
            pending.append(cid)

    # contents invisible in the reference inherit the nearest labeled content
    if pending:
        labeled = [c for c in cids if c in content_label]
        if labeled:
            cents = {}
            for c in cids:
                ys, xs = overlap.overlap_contents[c]
                cents[c] = np.array([xs.mean(), ys.mean()])
            for cid in pending:
                near = min(labeled, key=lambda c: np.linalg.norm(cents[c] - cents[cid]))
                content_label[cid] = content_label[near]
                content_error[cid] = np.inf
        else:
            frob = [np.linalg.norm(m.m - global_h.m) for m in models.models]
            li = int(np.argmin(frob))
            for cid in pending:
                content_label[cid] = li + 1
                content_error[cid] = np.inf

    pixel_model = np.zeros(overlap.mask.shape, dtype=np.int16)
    for cid, (ys, xs) in overlap.overlap_contents.items():
        pixel_model[ys, xs] = content_label[cid]
    return OverlapLabeling(
        global_h=global_h,
        content_label=content_label,
        content_error=content_error,
        pixel_model=pixel_model,
        models=list(models.models),
    )


def select_similarity(models: ModelSet, assign: np.ndarray, matches: MatchSet) -> Similarity:
    """Per-model similarity fits; returns the one with the smallest |rotation|."""
    best = None
    for l in range(1, len(models) + 1):
        idx = np.nonzero(np.asarray(assign) == l)[0]
        if len(idx) < 2:
            continue
        try:
            sim = estimate_similarity(matches.subset(idx))
        except DegenerateConfiguration:
            continue
        key = (abs(sim.angle), l)
        if best is None or key < best[0]:
            best = (key, sim)
    if best is None:
        raise DegenerateConfiguration("no model has two or more assigned matches")
    return best[1]


# ---------------------------------------------------------------------------
# anchors


def _contour_polyline(mask: np.ndarray) -> np.ndarray:
    """Closed boundary polyline (in pixel coords) of the largest mask region."""
    contours, _ = cv2.findContours(
        mask.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE
    )
    if not contours:
        raise EmptyRegion("mask has no boundary")
    best = max(contours, key=cv2.contourArea)
    poly = best.reshape(-1, 2).astype(float)
    if len(contours) > 1:
        log.info("overlap boundary has %d components; using the largest", len(contours))
    return poly


def _walk_polyline(poly: np.ndarray, count: int, closed: bool = True) -> np.ndarray:
    """count points at equal arc length, offset half a step from the start."""
    pts = np.vstack([poly, poly[:1]]) if closed else poly
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum()
    if total <= 0:
        return np.repeat(poly[:1], count, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = (np.arange(count) + 0.5) * total / count
    out = np.empty((count, 2))
    for i, t in enumerate(targets):
        k = np.searchsorted(cum, t, side="right") - 1
        k = min(k, len(seg) - 1)
        f = (t - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        out[i] = pts[k] + f * (pts[k + 1] - pts[k])
    return out


def _nearest_overlap_lookup(mask: np.ndarray):
    """Map any pixel to the nearest overlap pixel (indices), via EDT."""
    _, (iy, ix) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return iy, ix


def sample_anchors(
    overlap: OverlapMask,
    labeling: OverlapLabeling,
    r1: int = DEFAULT_R1,
    r2: int = DEFAULT_R2,
    nu: float = DEFAULT_NU,
    similarity: Similarity | None = None,
) -> AnchorSet:
    """Uniform arc-length anchors on the overlap boundary and the outer rim.

    Each overlap anchor carries the homography of its containing content
    (nearest labeled overlap pixel when it falls on a seam).
    """
    if r1 < 1 or r2 < 1:
        raise ValueError("r1 and r2 must be positive")
    if similarity is None:
        raise ValueError("a similarity transform is required")
    mask = overlap.mask
    h, w = mask.shape
    if not (~mask).any():
        raise EmptyRegion("non-overlap region is empty")

    poly = _contour_polyline(mask)
    a_pts = _walk_polyline(poly, r1)

    # outer rectangle boundary restricted to non-overlap pixels
    per = []
    for x in range(w):
        per.append((x, 0))
    for y in range(1, h):
        per.append((w - 1, y))
    for x in range(w - 2, -1, -1):
        per.append((x, h - 1))
    for y in range(h - 2, 0, -1):
        per.append((0, y))
    per = np.asarray(per, dtype=float)
    keep = ~mask[per[:, 1].astype(int), per[:, 0].astype(int)]
    if not keep.any():
        raise EmptyRegion("outer boundary lies entirely in the overlap")
    kept = per[keep]
    # arc length over kept points only (unit steps)
    idxs = np.floor((np.arange(r2) + 0.5) * len(kept) / r2).astype(int)
    b_pts = kept[np.clip(idxs, 0, len(kept) - 1)]

    niy, nix = _nearest_overlap_lookup(mask)
    a_models = np.empty(r1, dtype=int)
    a_imgs = np.empty((r1, 2))
    a_jacs = np.empty((r1, 2, 2))
    for i, (ax, ay) in enumerate(a_pts):
        px = int(np.clip(np.floor(ax), 0, w - 1))
        py = int(np.clip(np.floor(ay), 0, h - 1))
        if not mask[py, px]:
            py, px = int(niy[py, px]), int(nix[py, px])
        li = int(labeling.pixel_model[py, px])
        if li == 0:
            py2, px2 = int(niy[py, px]), int(nix[py, px])
            li = int(labeling.pixel_model[py2, px2])
        li = max(li, 1)
        hom = labeling.models[li - 1]
        a_models[i] = li
        a_imgs[i] = hom.apply(a_pts[i])[0]
        a_jacs[i] = homography_point_jacobian(hom, a_pts[i])
    return AnchorSet(
        overlap_pts=a_pts,
        overlap_models=a_models,
        overlap_images=a_imgs,
        overlap_jacobians=a_jacs,
        outer_pts=b_pts,
        similarity=similarity,
        nu=nu,
    )


# ---------------------------------------------------------------------------
# non-overlap mesh


def students_t_weights(d2: np.ndarray, nu: float) -> np.ndarray:
    return (1.0 + d2 / nu) ** (-(nu + 1.0) / 2.0)


def blend_weights(v: np.ndarray, anchors: AnchorSet):
    """Normalized Student's-t weights of all anchors at v; sums to one."""
    da = np.sum((anchors.overlap_pts - v) ** 2, axis=1)
    db = np.sum((anchors.outer_pts - v) ** 2, axis=1)
    wa = students_t_weights(da, anchors.nu)
    wb = students_t_weights(db, anchors.nu)
    total = wa.sum() + wb.sum()
    if total <= 0 or not np.isfinite(total):
        # fall back to the single nearest anchor
        ia = int(np.argmin(da))
        ib = int(np.argmin(db))
        wa = np.zeros_like(wa)
        wb = np.zeros_like(wb)
        if da[ia] <= db[ib]:
            wa[ia] = 1.0
        else:
            wb[ib] = 1.0
        total = 1.0
    return wa / total, wb / total


def warp_vertex(v: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    """Eq.-style blend: normalized t-weights over linearized homographies + similarity."""
    wa, wb = blend_weights(v, anchors)
    lin_a = anchors.overlap_images + np.einsum(
        "nij,nj->ni", anchors.overlap_jacobians, v - anchors.overlap_pts
    )
    js = anchors.similarity.jacobian()
    lin_b = anchors.similarity.apply(anchors.outer_pts) + (v - anchors.outer_pts) @ js.T
    return wa @ lin_a + wb @ lin_b


def build_nonoverlap_mesh(
    overlap: OverlapMask,
    labeling: OverlapLabeling,
    anchors: AnchorSet,
    cell_size: int = DEFAULT_CELL_SIZE,
) -> NonOverlapMesh:
    """Grid the non-overlap bounding region and warp its vertices.

    Vertices inside the overlap take their content homography's exact image,
    which pins the mesh to the homography-warped region; the rest blend the
    linearized homographies with the similarity via Student's-t weights.
    Quads containing non-overlap pixels are split into two affine triangles.
    """
    mask = overlap.mask
    h, w = mask.shape
    non = ~mask
    if not non.any():
        raise EmptyRegion("non-overlap region is empty")
    ys, xs = np.nonzero(non)
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())

    def grid_lines(a0, a1):
        lines = list(range(a0, a1, cell_size))
        if not lines or lines[-1] != a1:
            lines.append(a1)
        if len(lines) == 1:
            lines.append(a0 + 1)
        return np.asarray(lines)

    gx = grid_lines(x0, x1)
    gy = grid_lines(y0, y1)

    warped = np.empty((len(gy), len(gx), 2))
    for r, vy in enumerate(gy):
        for c, vx in enumerate(gx):
            inside = 0 <= vx < w and 0 <= vy < h
            li = int(labeling.pixel_model[vy, vx]) if inside else 0
            v = np.array([float(vx), float(vy)])
            if li > 0:
                warped[r, c] = labeling.models[li - 1].apply(v)[0]
            else:
                warped[r, c] = warp_vertex(v, anchors)

    # prefix sums for O(1) "any non-overlap pixel inside this quad" queries
    acc = np.zeros((h + 1, w + 1), dtype=np.int64)
    acc[1:, 1:] = np.cumsum(np.cumsum(non, axis=0), axis=1)

    def region_count(xa, xb, ya, yb):
        xa, xb = max(xa, 0), min(xb, w - 1)
        ya, yb = max(ya, 0), min(yb, h - 1)
        if xa > xb or ya > yb:
            return 0
        return acc[yb + 1, xb + 1] - acc[ya, xb + 1] - acc[yb + 1, xa] + acc[ya, xa]

    cells = []
    tri_src = []
    tri_dst = []
    for r in range(len(gy) - 1):
        for c in range(len(gx) - 1):
            if region_count(gx[c], gx[c + 1], gy[r], gy[r + 1]) == 0:
                continue
            cells.append((r, c))
            v00 = np.array([gx[c], gy[r]], dtype=float)
            v10 = np.array([gx[c + 1], gy[r]], dtype=float)
            v01 = np.array([gx[c], gy[r + 1]], dtype=float)
            v11 = np.array([gx[c + 1], gy[r + 1]], dtype=float)
            w00, w10 = warped[r, c], warped[r, c + 1]
            w01, w11 = warped[r + 1, c], warped[r + 1, c + 1]
            tri_src.append([v00, v10, v01])
            tri_dst.append([w00, w10, w01])
            tri_src.append([v10, v11, v01])
            tri_dst.append([w10, w11, w01])
    return NonOverlapMesh(
        cell_size=cell_size,
        grid_x=gx,
        grid_y=gy,
        warped=warped,
        cells=cells,
        tri_src=np.asarray(tri_src),
        tri_dst=np.asarray(tri_dst),
    )
