"""Occlusion-aware multi-warp rendering onto a shared canvas."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    CanvasOverflow,
    DegenerateConfiguration,
    EmptyRegion,
    EmptyResult,
    NoModelFound,
    SingularMap,
)
from .geometry import MatchSet, apply_matrix, estimate_similarity, fundamental_inlier_filter, robust_fundamental
from .image import Image, sample_bilinear
from .labeling import (
    NonOverlapMesh,
    OverlapLabeling,
    build_nonoverlap_mesh,
    global_homography,
    label_overlap_contents,
    sample_anchors,
    select_similarity,
)
from .multifit import (
    EnergyParams,
    ModelSet,
    NeighborGraph,
    build_neighborhood,
    data_cost_matrix,
    _energy_from_costs,
    fit,
    init_models_iterative_ransac,
)
from .segmentation import ContentPartition, OverlapMask, assign_points_to_contents, compute_overlap

log = logging.getLogger(__name__)

MAX_CANVAS_DIM = 20000
DILATE_3X3 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Canvas:
    """Output frame in reference coordinates; origin may be negative."""

    x0: int
    y0: int
    width: int
    height: int

    @property
    def offset(self) -> np.ndarray:
        return np.array([-self.x0, -self.y0], dtype=float)


@dataclass
class ErrorBuffer:
    """Per-canvas-pixel lowest claimed photometric error and its owner content."""

    best_error: np.ndarray  # (H, W) float
    owner: np.ndarray  # (H, W) int32, 0 = unowned
    coverage_count: np.ndarray  # (H, W) int16: number of claiming contents


@dataclass
class WarpReport:
    claimed_pixels: int = 0
    conflict_pixels: int = 0
    hole_pixels: int = 0
    fallback_single_model: bool = False


def compute_canvas(
    target_dims: tuple[int, int],
    ref_dims: tuple[int, int],
    labeling: OverlapLabeling,
    mesh: NonOverlapMesh | None,
    overlap: OverlapMask,
) -> Canvas:
    """Integer hull of the reference frame and all forward-mapped target geometry."""
    rw, rh = ref_dims
    xs = [0.0, float(rw)]
    ys = [0.0, float(rh)]
    for cid, li in labeling.content_label.items():
        pys, pxs = _content_pixels(labeling, overlap, cid)
        if len(pys) == 0:
            continue
        pts = np.column_stack([pxs, pys]).astype(float)
        mapped = labeling.models[li - 1].apply(pts)
        ok = np.isfinite(mapped).all(axis=1)
        if ok.any():
            xs += [float(mapped[ok, 0].min()), float(mapped[ok, 0].max())]
            ys += [float(mapped[ok, 1].min()), float(mapped[ok, 1].max())]
    if mesh is not None and len(mesh.tri_dst):
        v = mesh.tri_dst.reshape(-1, 2)
        ok = np.isfinite(v).all(axis=1)
        if ok.any():
            xs += [float(v[ok, 0].min()), float(v[ok, 0].max())]
            ys += [float(v[ok, 1].min()), float(v[ok, 1].max())]
    x0 = int(np.floor(min(xs)))
    y0 = int(np.floor(min(ys)))
    x1 = int(np.ceil(max(xs)))
    y1 = int(np.ceil(max(ys)))
    w, h = x1 - x0, y1 - y0
    if w > MAX_CANVAS_DIM or h > MAX_CANVAS_DIM:
        raise CanvasOverflow(f"canvas {w}x{h} exceeds {MAX_CANVAS_DIM} px")
    return Canvas(x0=x0, y0=y0, width=w, height=h)


def _content_pixels(labeling: OverlapLabeling, overlap: OverlapMask, cid: int):
    return overlap.overlap_contents[cid]


def _rasterize_forward(pts_xy: np.ndarray, canvas: Canvas) -> np.ndarray:
    """Rounded forward footprint, dilated by one pixel to close sampling gaps."""
    fp = np.zeros((canvas.height, canvas.width), dtype=bool)
    ok = np.isfinite(pts_xy).all(axis=1)
    if not ok.any():
        return fp
    px = np.rint(pts_xy[ok, 0] + canvas.offset[0]).astype(int)
    py = np.rint(pts_xy[ok, 1] + canvas.offset[1]).astype(int)
    keep = (px >= 0) & (px < canvas.width) & (py >= 0) & (py < canvas.height)
    fp[py[keep], px[keep]] = True
    return ndimage.binary_dilation(fp, structure=DILATE_3X3)


def forward_claim(
    labeling: OverlapLabeling,
    partition: ContentPartition,
    overlap: OverlapMask,
    canvas: Canvas,
    use_error_buffer: bool = True,
) -> tuple[ErrorBuffer, WarpReport]:
    """Each content claims its forward footprint; conflicts go to the lowest error.

    With use_error_buffer=False the claim degrades to last-writer-wins
    (contents processed in ascending id order), which only changes pixels
    covered by two or more contents.
    """
    buf = ErrorBuffer(
        best_error=np.full((canvas.height, canvas.width), np.inf),
        owner=np.zeros((canvas.height, canvas.width), dtype=np.int32),
        coverage_count=np.zeros((canvas.height, canvas.width), dtype=np.int16),
    )
    for cid in sorted(labeling.content_label):
        pys, pxs = _content_pixels(labeling, overlap, cid)
        if len(pys) == 0:
            continue
        h = labeling.models[labeling.content_label[cid] - 1]
        mapped = h.apply(np.column_stack([pxs, pys]).astype(float))
        fp = _rasterize_forward(mapped, canvas)
        buf.coverage_count[fp] += 1
        err = labeling.content_error.get(cid, np.inf)
        eff = err if np.isfinite(err) else 1e9  # sentinel contents lose all conflicts
        if use_error_buffer:
            win = fp & (eff < buf.best_error)
        else:
            win = fp
        buf.owner[win] = cid
        buf.best_error[win] = eff

    # holes: canvas pixels the global warp expects to reach but nobody claimed
    oys, oxs = np.nonzero(overlap.mask)
    g = labeling.global_h.apply(np.column_stack([oxs, oys]).astype(float))
    expected = _rasterize_forward(g, canvas)
    report = WarpReport(
        claimed_pixels=int((buf.owner > 0).sum()),
        conflict_pixels=int((buf.coverage_count >= 2).sum()),
        hole_pixels=int((expected & (buf.owner == 0)).sum()),
    )
    return buf, report


def backward_render(
    buffer: ErrorBuffer,
    labeling: OverlapLabeling,
    mesh: NonOverlapMesh | None,
    target: Image,
    canvas: Canvas,
) -> Image:
    """Pull target texture through the owning warp of every covered canvas pixel."""
    out = np.zeros((canvas.height, canvas.width, 3), dtype=np.uint8)
    covered = np.zeros((canvas.height, canvas.width), dtype=bool)

    for cid in np.unique(buffer.owner):
        if cid == 0:
            continue
        h = labeling.models[labeling.content_label[int(cid)] - 1]
        try:
            inv = np.linalg.inv(h.m)
        except np.linalg.LinAlgError as exc:  # cannot occur for a valid ModelSet
            raise SingularMap("owner homography is not invertible") from exc
        ys, xs = np.nonzero(buffer.owner == cid)
        ref_pts = np.column_stack([xs - canvas.offset[0], ys - canvas.offset[1]])
        src = apply_matrix(inv, ref_pts)
        vals, valid = sample_bilinear(target.pixels, src[:, 0], src[:, 1])
        out[ys[valid], xs[valid]] = np.clip(np.rint(vals[valid]), 0, 255).astype(np.uint8)
        covered[ys[valid], xs[valid]] = True

    if mesh is not None:
        _render_mesh(mesh, target, canvas, out, covered)
    return Image(out, covered)


def _render_mesh(mesh, target, canvas, out, covered):
    eps = 1e-9
    for t in range(len(mesh.tri_dst)):
        d0, d1, d2 = mesh.tri_dst[t] + canvas.offset
        s0, s1, s2 = mesh.tri_src[t]
        if not np.isfinite([d0, d1, d2]).all():
            continue
        m = np.array([[d1[0] - d0[0], d2[0] - d0[0]], [d1[1] - d0[1], d2[1] - d0[1]]])
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det) < 1e-12:
            continue
        minx = max(int(np.floor(min(d0[0], d1[0], d2[0]))), 0)
        maxx = min(int(np.ceil(max(d0[0], d1[0], d2[0]))), canvas.width - 1)
        miny = max(int(np.floor(min(d0[1], d1[1], d2[1]))), 0)
        maxy = min(int(np.ceil(max(d0[1], d1[1], d2[1]))), canvas.height - 1)
        if minx > maxx or miny > maxy:
            continue
        gx, gy = np.meshgrid(np.arange(minx, maxx + 1), np.arange(miny, maxy + 1))
        px = gx.ravel().astype(float)
        py = gy.ravel().astype(float)
        rel = np.column_stack([px - d0[0], py - d0[1]])
        inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
        uv = rel @ inv.T
        inside = (uv[:, 0] >= -eps) & (uv[:, 1] >= -eps) & (uv.sum(axis=1) <= 1 + eps)
        if not inside.any():
            continue
        ix = gx.ravel()[inside]
        iy = gy.ravel()[inside]
        free = ~covered[iy, ix]
        if not free.any():
            continue
        ix, iy = ix[free], iy[free]
        uvf = uv[inside][free]
        src = s0 + uvf[:, :1] * (s1 - s0) + uvf[:, 1:] * (s2 - s0)
        vals, valid = sample_bilinear(target.pixels, src[:, 0], src[:, 1])
        out[iy[valid], ix[valid]] = np.clip(np.rint(vals[valid]), 0, 255).astype(np.uint8)
        covered[iy[valid], ix[valid]] = True


def place_reference(reference: Image, canvas: Canvas) -> Image:
    """Paste the reference image into canvas coordinates."""
    out = np.zeros((canvas.height, canvas.width, 3), dtype=np.uint8)
    cov = np.zeros((canvas.height, canvas.width), dtype=bool)
    ox, oy = int(canvas.offset[0]), int(canvas.offset[1])
    h, w = reference.pixels.shape[:2]
    y0, y1 = max(0, oy), min(canvas.height, oy + h)
    x0, x1 = max(0, ox), min(canvas.width, ox + w)
    if y1 > y0 and x1 > x0:
        out[y0:y1, x0:x1] = reference.pixels[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
        cov[y0:y1, x0:x1] = reference.coverage[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
    return Image(out, cov)


def _feather_weights(cov: np.ndarray) -> np.ndarray:
    if cov.all():
        return np.ones(cov.shape)
    return ndimage.distance_transform_edt(cov)


def blend_linear(warped_target: Image, reference_on_canvas: Image, mode: str = "feather") -> Image:
    """Distance-feathered (or constant 50/50) average where both images cover."""
    if warped_target.pixels.shape != reference_on_canvas.pixels.shape:
        raise ValueError("canvas dimensions differ")
    ct = warped_target.coverage
    cr = reference_on_canvas.coverage
    both = ct & cr
    out = np.zeros_like(warped_target.pixels, dtype=float)
    tpix = warped_target.pixels.astype(float)
    rpix = reference_on_canvas.pixels.astype(float)
    only_t = ct & ~cr
    only_r = cr & ~ct
    out[only_t] = tpix[only_t]
    out[only_r] = rpix[only_r]
    if both.any():
        if mode == "constant":
            wt = np.ones(ct.shape)
            wr = np.ones(cr.shape)
        else:
            wt = _feather_weights(ct)
            wr = _feather_weights(cr)
        denom = wt + wr
        denom[denom == 0] = 1.0
        alpha = (wt / denom)[..., None]
        out[both] = (alpha * tpix + (1 - alpha) * rpix)[both]
    return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8), ct | cr)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class StitchArtifacts:
    panorama: Image
    warped_target: Image
    reference_on_canvas: Image
    report: WarpReport
    energy: object
    models: ModelSet
    assignment: np.ndarray
    labeling: OverlapLabeling
    canvas: Canvas
    buffer: ErrorBuffer
    mesh: NonOverlapMesh | None
    graph: NeighborGraph
    matches_used: MatchSet
    metrics: dict = field(default_factory=dict)


def stitch_pipeline(
    target: Image,
    reference: Image,
    partition: ContentPartition,
    matches: MatchSet,
    config,
) -> StitchArtifacts:
    """Full pipeline; see stitch() for the compact interface."""
    params = EnergyParams(
        lam=config.lam,
        beta=config.beta,
        gamma=config.gamma,
        min_remaining=config.min_remaining,
    )

    filtered = matches
    if len(matches) >= 8:
        try:
            f = robust_fundamental(matches, config.sampson_eps, seed=config.seed + 1)
            filtered, _ = fundamental_inlier_filter(f, matches)
        except DegenerateConfiguration:
            log.info("fundamental estimation degenerate; keeping all matches")

    h_g = global_homography(filtered)
    overlap = compute_overlap(
        partition, h_g, (reference.width, reference.height)
    )
    content_ids = assign_points_to_contents(partition, filtered)
    graph = build_neighborhood(
        filtered, content_ids, overlap, use_contents=not config.neighborhood_no_sam
    )

    fallback = False
    if config.force_single_model:
        models = ModelSet([h_g])
        assign = np.ones(len(filtered), dtype=int)
        costs = data_cost_matrix(models.models, filtered, params.gamma)
        energy = _energy_from_costs(costs, assign, graph.edges, params)
    elif config.use_initial_models:
        models = init_models_iterative_ransac(
            filtered, params, config.seed, config.ransac_threshold
        )
        costs = data_cost_matrix(models.models, filtered, params.gamma)
        assign = np.argmin(costs, axis=0)
        energy = _energy_from_costs(costs, assign, graph.edges, params)
    else:
        try:
            models, assign, energy = fit(
                filtered, graph, params, config.seed, config.ransac_threshold
            )
        except NoModelFound:
            log.warning("multi-model fitting failed; falling back to a single homography")
            fallback = True
            models = ModelSet([h_g])
            assign = np.ones(len(filtered), dtype=int)
            costs = data_cost_matrix(models.models, filtered, params.gamma)
            energy = _energy_from_costs(costs, assign, graph.edges, params)

    labeled = label_overlap_contents(overlap, models, target, reference, h_g)

    try:
        similarity = select_similarity(models, assign, filtered)
    except DegenerateConfiguration:
        similarity = estimate_similarity(filtered)

    mesh = None
    try:
        anchors = sample_anchors(
            overlap, labeled, config.r1, config.r2, config.nu, similarity
        )
        mesh = build_nonoverlap_mesh(overlap, labeled, anchors, config.cell_size)
    except EmptyRegion:
        log.info("images fully overlap; skipping the non-overlap mesh")

    canvas = compute_canvas(
        (target.width, target.height),
        (reference.width, reference.height),
        labeled,
        mesh,
        overlap,
    )
    buffer, report = forward_claim(
        labeled, partition, overlap, canvas, use_error_buffer=not config.disable_error_buffer
    )
    report.fallback_single_model = fallback
    warped = backward_render(buffer, labeled, mesh, target, canvas)
    ref_canvas = place_reference(reference, canvas)
    pano = blend_linear(warped, ref_canvas, config.blend_mode)

    from .errors import StitchError
    from .metrics import psnr_overlap, ssim_overlap

    metrics = {}
    try:
        metrics["psnr"] = psnr_overlap(warped, ref_canvas)
        metrics["ssim"] = ssim_overlap(warped, ref_canvas)
        metrics["evaluated_pixels"] = int((warped.coverage & ref_canvas.coverage).sum())
    except StitchError as exc:  # metrics are advisory inside stitch
        log.warning("metric computation failed: %s", exc)

    return StitchArtifacts(
        panorama=pano,
        warped_target=warped,
        reference_on_canvas=ref_canvas,
        report=report,
        energy=energy,
        models=models,
        assignment=assign,
        labeling=labeled,
        canvas=canvas,
        buffer=buffer,
        mesh=mesh,
        graph=graph,
        matches_used=filtered,
        metrics=metrics,
    )


def stitch(target: Image, reference: Image, partition: ContentPartition, matches: MatchSet, config):
    """Stitch the pair; returns (panorama Image, WarpReport, EnergyBreakdown)."""
    art = stitch_pipeline(target, reference, partition, matches, config)
    return art.panorama, art.report, art.energy
