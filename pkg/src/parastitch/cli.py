"""Batch command-line interface: stitch, synth, eval, fit."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import imgio
from .config import RunConfig, build_config
from .errors import (
    DecodeError,
    DegenerateConfiguration,
    DimensionMismatch,
    EmptyOverlap,
    InvalidSpec,
    NoModelFound,
    StitchError,
)
from .geometry import Homography
from .image import Image
from .metrics import metric_report
from .multifit import EnergyParams, build_neighborhood, fit
from .segmentation import (
    assign_points_to_contents,
    compute_overlap,
    load_label_map,
    normalize_partition,
)
from .labeling import global_homography
from .synthscene import (
    PlaneSpec,
    SceneSpec,
    generate,
    interleaved_scene,
    occlusion_scene,
    three_plane_scene,
    two_plane_scene,
)
from .warping import stitch_pipeline

log = logging.getLogger("parastitch")

EXIT_OK = 0
EXIT_IO = 2
EXIT_GEOMETRY = 3
EXIT_EMPTY_OVERLAP = 4

OWNERSHIP_PALETTE = np.array(
    [
        (0, 0, 0),
        (230, 80, 60),
        (70, 140, 230),
        (90, 200, 120),
        (235, 200, 80),
        (170, 90, 210),
        (90, 210, 210),
        (240, 140, 60),
        (150, 150, 150),
    ],
    dtype=np.uint8,
)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--lambda", dest="lam", type=float, help="smoothness weight")
    p.add_argument("--beta", type=float, help="per-model label cost")
    p.add_argument("--gamma", type=float, help="outlier data cost (px)")
    p.add_argument("--nu", type=float, help="Student's-t decay")
    p.add_argument("--cell-size", dest="cell_size", type=int, help="mesh cell size (px)")
    p.add_argument("--r1", type=int, help="overlap-boundary anchors")
    p.add_argument("--r2", type=int, help="outer-boundary anchors")
    p.add_argument("--seed", type=int, help="PRNG seed")
    p.add_argument("--min-remaining", dest="min_remaining", type=int)
    p.add_argument("--ransac-threshold", dest="ransac_threshold", type=float)
    p.add_argument("--sampson-eps", dest="sampson_eps", type=float)
    p.add_argument("--blend", dest="blend_mode", choices=["feather", "constant"])
    p.add_argument(
        "--ablation",
        choices=["h0", "no-sam-neighborhood", "no-error-buffer", "single-h"],
        action="append",
        default=None,
        help="enable an ablation mode (repeatable)",
    )


def _config_from_args(args) -> RunConfig:
    ablations = args.ablation or []
    return build_config(
        file_path=args.config,
        lam=args.lam,
        beta=args.beta,
        gamma=args.gamma,
        nu=args.nu,
        cell_size=args.cell_size,
        r1=args.r1,
        r2=args.r2,
        seed=args.seed,
        min_remaining=args.min_remaining,
        ransac_threshold=args.ransac_threshold,
        sampson_eps=args.sampson_eps,
        blend_mode=args.blend_mode,
        use_initial_models=True if "h0" in ablations else None,
        neighborhood_no_sam=True if "no-sam-neighborhood" in ablations else None,
        disable_error_buffer=True if "no-error-buffer" in ablations else None,
        force_single_model=True if "single-h" in ablations else None,
    )


def _ownership_image(buffer, labeling) -> np.ndarray:
    """One color per model label (not per content); black = unowned."""
    lut = np.zeros(max(labeling.content_label.keys(), default=0) + 1, dtype=np.int32)
    for cid, li in labeling.content_label.items():
        lut[cid] = li
    model_idx = lut[buffer.owner]
    colors = OWNERSHIP_PALETTE[model_idx % len(OWNERSHIP_PALETTE)]
    colors[buffer.owner == 0] = 0
    return colors


def cmd_stitch(args) -> int:
    try:
        config = _config_from_args(args)
    except (StitchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        target_px, target_cov = imgio.load_image(args.target)
        ref_px, ref_cov = imgio.load_image(args.reference)
        target = Image(target_px, target_cov)
        reference = Image(ref_px, ref_cov)
        raw = load_label_map(args.labels, (target.width, target.height))
        matches = imgio.load_matches(args.matches)
    except (DecodeError, DimensionMismatch, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    partition = normalize_partition(raw)
    try:
        art = stitch_pipeline(target, reference, partition, matches, config)
    except EmptyOverlap as exc:
        print(f"error: empty overlap: {exc}", file=sys.stderr)
        return EXIT_EMPTY_OVERLAP
    except StitchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY

    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    imgio.save_image(os.path.join(out, "panorama.png"), art.panorama.pixels)
    imgio.save_image(
        os.path.join(out, "warped_target.png"),
        art.warped_target.pixels,
        art.warped_target.coverage,
    )
    imgio.save_image(
        os.path.join(out, "ownership.png"), _ownership_image(art.buffer, art.labeling)
    )
    report = {
        "config": config.to_dict(),
        "energy": {
            "data": art.energy.data,
            "smooth": art.energy.smooth,
            "label_cost": art.energy.label_cost,
            "total": art.energy.total,
        },
        "warp": {
            "claimed_pixels": art.report.claimed_pixels,
            "conflict_pixels": art.report.conflict_pixels,
            "hole_pixels": art.report.hole_pixels,
            "fallback_single_model": art.report.fallback_single_model,
        },
        "metrics": art.metrics,
        "model_count": len(art.models),
        "match_count": len(art.matches_used),
        "canvas": [art.canvas.x0, art.canvas.y0, art.canvas.width, art.canvas.height],
    }
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if art.metrics:
        print(
            "stitched: psnr=%.2f ssim=%.4f models=%d"
            % (art.metrics["psnr"], art.metrics["ssim"], len(art.models))
        )
    return EXIT_GEOMETRY if art.report.fallback_single_model else EXIT_OK


def _scene_from_file(path: str) -> SceneSpec:
    with open(path) as fh:
        doc = json.load(fh)
    planes = [
        PlaneSpec(
            homography=Homography(np.asarray(p["homography"], dtype=float).reshape(3, 3)),
            depth=int(p["depth"]),
            footprint=None if p.get("footprint") is None else np.asarray(p["footprint"], float),
        )
        for p in doc["planes"]
    ]
    return SceneSpec(
        dims=tuple(doc["dims"]),
        planes=planes,
        texture_seed=int(doc.get("texture_seed", 0)),
        matches_per_plane=int(doc.get("matches_per_plane", 100)),
        outlier_fraction=float(doc.get("outlier_fraction", 0.0)),
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
        meta=doc.get("meta", {}),
    )


def cmd_synth(args) -> int:
    try:
        if args.spec:
            spec = _scene_from_file(args.spec)
        else:
            presets = {
                "two-plane": two_plane_scene,
                "three-plane": three_plane_scene,
                "interleaved": interleaved_scene,
                "occlusion": occlusion_scene,
            }
            kwargs = {}
            if args.seed is not None:
                kwargs["seed"] = args.seed
            if args.matches_per_plane is not None:
                kwargs["matches_per_plane"] = args.matches_per_plane
            if args.noise_sigma is not None:
                kwargs["noise_sigma"] = args.noise_sigma
            if args.outlier_fraction is not None:
                kwargs["outlier_fraction"] = args.outlier_fraction
            spec = presets[args.preset](**kwargs)
        target, reference, matches, labels, gt = generate(spec)
    except (InvalidSpec, DecodeError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    out = args.out_dir
    try:
        os.makedirs(out, exist_ok=True)
        imgio.save_image(os.path.join(out, "target.png"), target.pixels)
        imgio.save_image(os.path.join(out, "reference.png"), reference.pixels)
        imgio.save_matches(os.path.join(out, "matches.txt"), matches)
        imgio.save_label_png(os.path.join(out, "labels.png"), labels.labels)
        gt_doc = {
            "match_plane_ids": gt.match_plane_ids.tolist(),
            "outlier_flags": gt.outlier_flags.astype(int).tolist(),
            "homographies": [h.m.tolist() for h in gt.homographies],
            "camera_roll": gt.camera_roll,
            "meta": gt.meta,
        }
        with open(os.path.join(out, "gt.json"), "w") as fh:
            json.dump(gt_doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        np.savez_compressed(
            os.path.join(out, "gt_correspondence.npz"),
            correspondence=gt.correspondence,
            occluded=gt.occluded,
        )
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote 6 files to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        apx, acov = imgio.load_image(args.image_a)
        bpx, bcov = imgio.load_image(args.image_b)
    except DecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        rep = metric_report(Image(apx, acov), Image(bpx, bcov))
    except (EmptyOverlap, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_OVERLAP
    line = f"psnr={rep.psnr:.6f} ssim={rep.ssim:.6f} pixels={rep.evaluated_pixels}"
    print(line)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(
                {"psnr": rep.psnr, "ssim": rep.ssim, "evaluated_pixels": rep.evaluated_pixels},
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        config = _config_from_args(args)
        matches = imgio.load_matches(args.matches)
        raw = imgio.load_label_png(args.labels)
    except (StitchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    from .segmentation import LabelMap

    partition = normalize_partition(LabelMap(raw))
    ref_dims = (
        tuple(int(v) for v in args.ref_dims.split("x"))
        if args.ref_dims
        else (raw.shape[1], raw.shape[0])
    )
    params = EnergyParams(
        lam=config.lam,
        beta=config.beta,
        gamma=config.gamma,
        min_remaining=config.min_remaining,
    )
    try:
        h_g = global_homography(matches)
        overlap = compute_overlap(partition, h_g, ref_dims)
        cids = assign_points_to_contents(partition, matches)
        graph = build_neighborhood(
            matches, cids, overlap, use_contents=not config.neighborhood_no_sam
        )
        models, assign, energy = fit(
            matches, graph, params, config.seed, config.ransac_threshold
        )
    except EmptyOverlap as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_OVERLAP
    except (NoModelFound, DegenerateConfiguration) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY

    doc = {
        "models": [h.m.ravel().tolist() for h in models.models],
        "labels": np.asarray(assign).tolist(),
        "energy": {
            "data": energy.data,
            "smooth": energy.smooth,
            "label_cost": energy.label_cost,
            "total": energy.total,
        },
        "config": config.to_dict(),
    }
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        print()
    print(
        "energy: data=%.3f smooth=%.3f label=%.3f total=%.3f models=%d"
        % (energy.data, energy.smooth, energy.label_cost, energy.total, len(models)),
        file=sys.stderr,
    )
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="parastitch",
        description="Parallax-tolerant stitching via segmentation-guided multi-homography warping",
    )
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("stitch", help="stitch a target/reference pair")
    ps.add_argument("target")
    ps.add_argument("reference")
    ps.add_argument("labels", help="16-bit label-map PNG for the target")
    ps.add_argument("matches", help="x_t y_t x_r y_r match file")
    ps.add_argument("--out-dir", default="out")
    _add_config_flags(ps)
    ps.set_defaults(func=cmd_stitch)

    py = sub.add_parser("synth", help="generate a synthetic scene")
    py.add_argument(
        "--preset",
        default="two-plane",
        choices=["two-plane", "three-plane", "interleaved", "occlusion"],
    )
    py.add_argument("--spec", help="scene spec JSON (overrides --preset)")
    py.add_argument("--out-dir", default="scene")
    py.add_argument("--seed", type=int)
    py.add_argument("--matches-per-plane", dest="matches_per_plane", type=int)
    py.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    py.add_argument("--outlier-fraction", dest="outlier_fraction", type=float)
    py.set_defaults(func=cmd_synth)

    pe = sub.add_parser("eval", help="PSNR/SSIM on the mutual coverage of two images")
    pe.add_argument("image_a")
    pe.add_argument("image_b")
    pe.add_argument("--out", help="write the report JSON here")
    pe.set_defaults(func=cmd_eval)

    pf = sub.add_parser("fit", help="multi-homography fitting only")
    pf.add_argument("matches")
    pf.add_argument("labels")
    pf.add_argument("--out", help="write models + labels JSON here")
    pf.add_argument("--ref-dims", dest="ref_dims", help="WxH of the reference (default: label dims)")
    _add_config_flags(pf)
    pf.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
