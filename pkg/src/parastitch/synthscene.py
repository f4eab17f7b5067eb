"""Deterministic synthetic parallax scenes with exact ground truth.

Planes carry target-to-reference homographies built from one camera pair,
so every match (from any plane) is consistent with a single fundamental
matrix, as for a real rigid scene. Textures are procedural (smooth sine
pattern plus hash-lattice value noise) and evaluable at arbitrary float
coordinates, which makes the reference render an exact resampling oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from matplotlib.path import Path as MplPath

from .errors import InvalidSpec
from .geometry import Homography, MatchSet, apply_matrix, symmetric_transfer_error
from .image import Image
from .segmentation import LabelMap


@dataclass(frozen=True)
class PlaneSpec:
    """One scene plane: warp to the reference, depth rank, target footprint."""

    homography: Homography
    depth: int  # smaller = nearer to the camera
    footprint: np.ndarray | None = None  # (K,2) polygon in target px; None = everywhere


@dataclass
class SceneSpec:
    dims: tuple[int, int]  # (w, h), both images
    planes: list[PlaneSpec] = field(default_factory=list)
    texture_seed: int = 0
    matches_per_plane: int = 100
    outlier_fraction: float = 0.0
    noise_sigma: float = 0.0
    outlier_min_error: float = 250.0  # injected outliers must miss every plane by this STE
    meta: dict = field(default_factory=dict)


@dataclass
class GroundTruth:
    match_plane_ids: np.ndarray  # (N,) 1-based plane id per match
    outlier_flags: np.ndarray  # (N,) bool
    correspondence: np.ndarray  # (H, W, 2) float32 target->reference map
    occluded: np.ndarray  # (H, W) bool: not visible in the reference
    homographies: list
    camera_roll: float = 0.0
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# procedural texture: hash-lattice value noise, defined on the whole plane


_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xC2B2AE3D27D4EB4F)
_MIX3 = np.uint64(0xD6E8FEB86659FD93)


def _hash_unit(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic [0,1) value per integer lattice point."""
    h = ix.astype(np.int64).astype(np.uint64) * _MIX1
    h += iy.astype(np.int64).astype(np.uint64) * _MIX2
    h ^= np.uint64((seed * 0xD6E8FEB86659FD93) & 0xFFFFFFFFFFFFFFFF)
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return h.astype(np.float64) / 2.0**64


def _value_noise(xs, ys, cell: float, seed: int) -> np.ndarray:
    gx = np.asarray(xs, dtype=float) / cell
    gy = np.asarray(ys, dtype=float) / cell
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    fx = gx - x0
    fy = gy - y0
    # smoothstep fade
    ux = fx * fx * (3 - 2 * fx)
    uy = fy * fy * (3 - 2 * fy)
    v00 = _hash_unit(x0, y0, seed)
    v10 = _hash_unit(x0 + 1, y0, seed)
    v01 = _hash_unit(x0, y0 + 1, seed)
    v11 = _hash_unit(x0 + 1, y0 + 1, seed)
    top = v00 + (v10 - v00) * ux
    bot = v01 + (v11 - v01) * ux
    return top + (bot - top) * uy


def _fbm(xs, ys, seed: int, octaves: int = 4, base_cell: float = 48.0) -> np.ndarray:
    """Fractal value noise in [-1, 1]."""
    out = np.zeros(np.broadcast(np.asarray(xs), np.asarray(ys)).shape, dtype=float)
    amp = 1.0
    total = 0.0
    cell = base_cell
    for o in range(octaves):
        out += amp * _value_noise(xs, ys, cell, seed + 101 * o)
        total += amp
        amp *= 0.5
        cell /= 2.0
    return (out / total) * 2.0 - 1.0


_PALETTE = np.array(
    [
        (165, 105, 80),
        (80, 130, 175),
        (170, 165, 95),
        (95, 170, 120),
        (150, 95, 160),
        (110, 110, 110),
    ],
    dtype=float,
)


def plane_texture(xs, ys, plane_index: int, texture_seed: int) -> np.ndarray:
    """RGB in [0,255] evaluated at float coordinates (..., 3)."""
    base = _PALETTE[plane_index % len(_PALETTE)]
    seed = texture_seed * 1000003 + plane_index * 7919
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    tx = 37.0 + 6.0 * (plane_index % 3)
    ty = 29.0 + 5.0 * ((plane_index + 1) % 3)
    pattern = 24.0 * np.sin(2 * np.pi * xs / tx + 0.7 * plane_index) * np.sin(
        2 * np.pi * ys / ty + 1.3 * plane_index
    )
    rough = _fbm(xs, ys, seed)
    # mid-frequency detail: decorrelates under tens-of-pixels misalignment
    # while keeping per-pixel gradients (resampling error) small
    detail = (_value_noise(xs, ys, 16.0, seed + 777) - 0.5) * 2.0
    out = np.empty(xs.shape + (3,), dtype=float)
    for c in range(3):
        chan = _fbm(xs + 1000 * (c + 1), ys - 500 * (c + 1), seed + 17 * c, octaves=2, base_cell=96.0)
        out[..., c] = base[c] + pattern + 26.0 * rough + 34.0 * detail + 10.0 * chan
    return np.clip(out, 0.0, 255.0)


# ---------------------------------------------------------------------------
# camera helpers


def rotation_matrix(yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1.0]])
    ry = np.array([[cy, 0, sy], [0, 1.0, 0], [-sy, 0, cy]])
    rx = np.array([[1.0, 0, 0], [0, cp, -sp], [0, sp, cp]])
    return rz @ ry @ rx


def plane_homography(
    focal: float,
    dims: tuple[int, int],
    rotation: np.ndarray,
    translation,
    normal,
    depth: float,
) -> Homography:
    """Homography induced by the plane n.X = depth for the camera pair (I | R,t)."""
    w, h = dims
    k = np.array([[focal, 0, w / 2.0], [0, focal, h / 2.0], [0, 0, 1.0]])
    t = np.asarray(translation, dtype=float).reshape(3, 1)
    n = np.asarray(normal, dtype=float).reshape(1, 3)
    m = k @ (rotation + t @ n / depth) @ np.linalg.inv(k)
    return Homography(m)


# ---------------------------------------------------------------------------
# generation


def _rasterize_footprints(spec: SceneSpec) -> np.ndarray:
    w, h = spec.dims
    labels = np.zeros((h, w), dtype=np.int32)
    order = sorted(range(len(spec.planes)), key=lambda i: spec.planes[i].depth)
    for idx in order:  # nearest first; each pixel goes to the nearest claimant
        plane = spec.planes[idx]
        if plane.footprint is None:
            mask = np.ones((h, w), dtype=bool)
        else:
            mask = np.zeros((h, w), dtype=np.uint8)
            poly = np.round(np.asarray(plane.footprint)).astype(np.int32)
            cv2.fillPoly(mask, [poly.reshape(-1, 1, 2)], 1)
            mask = mask.astype(bool)
        labels[(labels == 0) & mask] = idx + 1
    if (labels == 0).any():
        raise InvalidSpec("plane footprints do not cover the target image")
    return labels


def _inside_footprint(plane: PlaneSpec, pts: np.ndarray) -> np.ndarray:
    if plane.footprint is None:
        return np.ones(len(pts), dtype=bool)
    path = MplPath(np.asarray(plane.footprint, dtype=float))
    return path.contains_points(pts)


def _validate(spec: SceneSpec) -> None:
    w, h = spec.dims
    if w < 8 or h < 8:
        raise InvalidSpec("scene dimensions too small")
    if not spec.planes:
        raise InvalidSpec("no planes")
    depths = [p.depth for p in spec.planes]
    if len(set(depths)) != len(depths):
        raise InvalidSpec("depth order must be total (distinct depths)")
    if not 0.0 <= spec.outlier_fraction < 1.0:
        raise InvalidSpec("outlier_fraction must be in [0, 1)")
    if spec.matches_per_plane < 1:
        raise InvalidSpec("matches_per_plane must be positive")
    if spec.noise_sigma < 0:
        raise InvalidSpec("noise_sigma must be nonnegative")


def generate(spec: SceneSpec):
    """Render the scene; returns (target, reference, matches, labels, gt)."""
    _validate(spec)
    w, h = spec.dims
    rng = np.random.default_rng(spec.texture_seed)
    labels = _rasterize_footprints(spec)
    n_planes = len(spec.planes)

    # target image: each plane textures its own footprint
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    target = np.zeros((h, w, 3), dtype=float)
    for idx, plane in enumerate(spec.planes):
        sel = labels == idx + 1
        target[sel] = plane_texture(xs[sel], ys[sel], idx, spec.texture_seed)

    # reference image: nearest plane whose backprojected point is inside its footprint
    near_order = sorted(range(n_planes), key=lambda i: spec.planes[i].depth)
    ref = np.zeros((h, w, 3), dtype=float)
    ref_unset = np.ones((h, w), dtype=bool)
    q_pts = np.column_stack([xs.ravel(), ys.ravel()])
    for idx in near_order:
        plane = spec.planes[idx]
        back = apply_matrix(np.linalg.inv(plane.homography.m), q_pts)
        inside = np.isfinite(back).all(axis=1)
        inside[inside] = _inside_footprint(plane, back[inside])
        take = ref_unset.ravel() & inside
        if take.any():
            pts = back[take]
            ref.reshape(-1, 3)[take] = plane_texture(
                pts[:, 0], pts[:, 1], idx, spec.texture_seed
            )
            ref_unset.ravel()[take] = False
    if ref_unset.any():
        raise InvalidSpec(
            "reference not fully covered; give the deepest plane footprint=None"
        )

    # exact target->reference correspondence and occlusion flags
    corr = np.zeros((h, w, 2), dtype=np.float32)
    occluded = np.zeros((h, w), dtype=bool)
    for idx, plane in enumerate(spec.planes):
        sel = (labels == idx + 1).ravel()
        if not sel.any():
            continue
        mapped = apply_matrix(plane.homography.m, q_pts[sel])
        corr.reshape(-1, 2)[sel] = mapped
        out = (
            ~np.isfinite(mapped).all(axis=1)
            | (mapped[:, 0] < 0)
            | (mapped[:, 0] >= w)
            | (mapped[:, 1] < 0)
            | (mapped[:, 1] >= h)
        )
        occ = out.copy()
        vis = ~out
        if vis.any():
            pts_vis = mapped[vis]
            blocked = np.zeros(len(pts_vis), dtype=bool)
            for jdx in near_order:
                if spec.planes[jdx].depth >= plane.depth:
                    break
                other = spec.planes[jdx]
                back = apply_matrix(np.linalg.inv(other.homography.m), pts_vis)
                okb = np.isfinite(back).all(axis=1)
                okb[okb] = _inside_footprint(other, back[okb])
                blocked |= okb
            occ[np.nonzero(vis)[0][blocked]] = True
        occluded.ravel()[sel] = occ

    # matches: per plane, sub-pixel points visible in the reference
    match_t, match_r, plane_ids = [], [], []
    for idx, plane in enumerate(spec.planes):
        sel_ys, sel_xs = np.nonzero((labels == idx + 1) & ~occluded)
        if len(sel_ys) < spec.matches_per_plane:
            raise InvalidSpec(f"plane {idx + 1} has too few visible pixels for matches")
        order = rng.permutation(len(sel_ys))
        taken = 0
        for pick in order:
            px = sel_xs[pick] + rng.uniform(0.0, 1.0)
            py = sel_ys[pick] + rng.uniform(0.0, 1.0)
            q = apply_matrix(plane.homography.m, np.array([[px, py]]))[0]
            if not (0 <= q[0] < w and 0 <= q[1] < h):
                continue
            match_t.append((px, py))
            match_r.append((q[0], q[1]))
            plane_ids.append(idx + 1)
            taken += 1
            if taken == spec.matches_per_plane:
                break
        if taken < spec.matches_per_plane:
            raise InvalidSpec(f"plane {idx + 1}: not enough in-bounds projections")

    match_t = np.asarray(match_t)
    match_r = np.asarray(match_r)
    plane_ids = np.asarray(plane_ids, dtype=np.int32)
    n_total = len(match_t)

    # measurement noise, truncated so the per-match STE stays below 2.8 sigma
    if spec.noise_sigma > 0:
        noise = rng.normal(0.0, spec.noise_sigma, size=match_r.shape)
        for i in range(n_total):
            hm = spec.planes[plane_ids[i] - 1].homography
            for _ in range(40):
                q = match_r[i] + noise[i]
                if 0 <= q[0] < w and 0 <= q[1] < h:
                    ste = symmetric_transfer_error(hm, match_t[i], q)
                    if ste < 2.8 * spec.noise_sigma:
                        break
                noise[i] *= 0.6
            match_r[i] = match_r[i] + noise[i]

    # outlier injection: replace the reference point with one no plane explains
    outlier_flags = np.zeros(n_total, dtype=bool)
    n_out = int(round(spec.outlier_fraction * n_total))
    if n_out:
        out_idx = rng.choice(n_total, size=n_out, replace=False)
        for i in out_idx:
            for _ in range(1000):
                q = rng.uniform([0, 0], [w, h])
                worst = min(
                    symmetric_transfer_error(p.homography, match_t[i], q)
                    for p in spec.planes
                )
                if worst > spec.outlier_min_error:
                    break
            match_r[i] = q
            outlier_flags[i] = True

    matches = MatchSet(match_t, match_r)
    gt = GroundTruth(
        match_plane_ids=plane_ids,
        outlier_flags=outlier_flags,
        correspondence=corr,
        occluded=occluded,
        homographies=[p.homography for p in spec.planes],
        camera_roll=float(spec.meta.get("camera_roll", 0.0)),
        meta=dict(spec.meta),
    )
    target_img = Image(np.clip(np.rint(target), 0, 255).astype(np.uint8))
    ref_img = Image(np.clip(np.rint(ref), 0, 255).astype(np.uint8))
    return target_img, ref_img, matches, LabelMap(labels.astype(np.uint16)), gt


# ---------------------------------------------------------------------------
# scene presets used across the test suite and the CLI


def two_plane_scene(
    dims=(640, 480),
    seed: int = 7,
    matches_per_plane: int = 150,
    noise_sigma: float = 0.0,
    outlier_fraction: float = 0.0,
    roll: float = 0.0,
) -> SceneSpec:
    """Background plus one nearer foreground slab; ~60 px of parallax."""
    w, h = dims
    focal = 0.95 * w
    rot = rotation_matrix(yaw=np.deg2rad(2.0), pitch=np.deg2rad(0.5), roll=roll)
    t = np.array([0.33, 0.02, 0.0])
    bg = PlaneSpec(plane_homography(focal, dims, rot, t, (0, 0, 1.0), 1.20), depth=1, footprint=None)
    fg_poly = np.array(
        [
            [0.10 * w, 0.25 * h],
            [0.38 * w, 0.25 * h],
            [0.38 * w, 0.78 * h],
            [0.10 * w, 0.78 * h],
        ]
    )
    fg = PlaneSpec(
        plane_homography(focal, dims, rot, t, (0.05, 0, 1.0), 0.80), depth=0, footprint=fg_poly
    )
    return SceneSpec(
        dims=dims,
        planes=[fg, bg],
        texture_seed=seed,
        matches_per_plane=matches_per_plane,
        noise_sigma=noise_sigma,
        outlier_fraction=outlier_fraction,
        meta={"camera_roll": roll, "preset": "two_plane"},
    )


def occlusion_scene(
    dims=(640, 480),
    seed: int = 19,
    matches_per_plane: int = 150,
    noise_sigma: float = 0.4,
    outlier_fraction: float = 0.05,
) -> SceneSpec:
    """Occlusion stressor: the near plane is anchored at the image origin.

    The foreground then takes the lower content id, so last-writer-wins
    claiming (the error-buffer ablation) hands its conflicts to the occluded
    background, while the error buffer resolves them correctly.
    """
    w, h = dims
    focal = 0.95 * w
    rot = rotation_matrix(yaw=np.deg2rad(1.8), pitch=np.deg2rad(0.3))
    t = np.array([0.32, 0.015, 0.0])
    fg_poly = np.array([[0.0, 0.0], [0.32 * w, 0.0], [0.32 * w, 0.62 * h], [0.0, 0.62 * h]])
    fg = PlaneSpec(
        plane_homography(focal, dims, rot, t, (0.04, 0.01, 1.0), 0.78), depth=0, footprint=fg_poly
    )
    bg = PlaneSpec(plane_homography(focal, dims, rot, t, (0, 0, 1.0), 1.25), depth=1, footprint=None)
    return SceneSpec(
        dims=dims,
        planes=[fg, bg],
        texture_seed=seed,
        matches_per_plane=matches_per_plane,
        noise_sigma=noise_sigma,
        outlier_fraction=outlier_fraction,
        meta={"preset": "occlusion"},
    )


def three_plane_scene(
    dims=(640, 480),
    seed: int = 11,
    matches_per_plane: int = 150,
    noise_sigma: float = 0.5,
    outlier_fraction: float = 0.2,
) -> SceneSpec:
    w, h = dims
    focal = 0.95 * w
    rot = rotation_matrix(yaw=np.deg2rad(1.5), pitch=np.deg2rad(-0.4), roll=np.deg2rad(0.8))
    t = np.array([0.30, 0.03, 0.0])
    bg = PlaneSpec(plane_homography(focal, dims, rot, t, (0, 0, 1.0), 1.35), depth=2, footprint=None)
    mid_poly = np.array(
        [[0.36 * w, 0.0], [0.64 * w, 0.0], [0.64 * w, h - 1.0], [0.36 * w, h - 1.0]]
    )
    mid = PlaneSpec(
        plane_homography(focal, dims, rot, t, (-0.04, 0.02, 1.0), 0.95),
        depth=1,
        footprint=mid_poly,
    )
    fg_poly = np.array(
        [[0.06 * w, 0.20 * h], [0.34 * w, 0.20 * h], [0.34 * w, 0.82 * h], [0.06 * w, 0.82 * h]]
    )
    fg = PlaneSpec(
        plane_homography(focal, dims, rot, t, (0.06, -0.03, 1.0), 0.70),
        depth=0,
        footprint=fg_poly,
    )
    return SceneSpec(
        dims=dims,
        planes=[fg, mid, bg],
        texture_seed=seed,
        matches_per_plane=matches_per_plane,
        noise_sigma=noise_sigma,
        outlier_fraction=outlier_fraction,
        meta={"preset": "three_plane"},
    )


def interleaved_scene(
    dims=(640, 480),
    seed: int = 23,
    matches_per_plane: int = 120,
    noise_sigma: float = 0.6,
    outlier_fraction: float = 0.05,
    stripes: int = 6,
) -> SceneSpec:
    """Two planes whose footprints interleave as vertical stripes."""
    w, h = dims
    focal = 0.95 * w
    rot = rotation_matrix(yaw=np.deg2rad(1.2), roll=np.deg2rad(-0.5))
    t = np.array([0.28, 0.0, 0.0])
    x0, x1 = 0.05 * w, 0.55 * w
    step = (x1 - x0) / stripes
    rail_y = 0.15 * h
    # comb polygon: even stripes as teeth joined along the rail line
    pts = []
    for s in range(0, stripes, 2):
        xs0 = x0 + s * step
        xs1 = x0 + (s + 1) * step
        pts.extend([[xs0, rail_y], [xs0, 0.85 * h], [xs1, 0.85 * h], [xs1, rail_y]])
    fg_poly = np.array(pts)
    fg = PlaneSpec(
        plane_homography(focal, dims, rot, t, (0.05, 0, 1.0), 0.75), depth=0, footprint=fg_poly
    )
    bg = PlaneSpec(plane_homography(focal, dims, rot, t, (0, 0, 1.0), 1.25), depth=1, footprint=None)
    return SceneSpec(
        dims=dims,
        planes=[fg, bg],
        texture_seed=seed,
        matches_per_plane=matches_per_plane,
        noise_sigma=noise_sigma,
        outlier_fraction=outlier_fraction,
        meta={"preset": "interleaved"},
    )
