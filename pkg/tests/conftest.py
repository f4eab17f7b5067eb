import numpy as np
import pytest

import parastitch as ps


@pytest.fixture(scope="session")
def two_plane_bundle():
    spec = ps.two_plane_scene(noise_sigma=0.5, outlier_fraction=0.1)
    target, reference, matches, labels, gt = ps.generate(spec)
    partition = ps.normalize_partition(labels)
    return dict(
        spec=spec, target=target, reference=reference, matches=matches,
        labels=labels, gt=gt, partition=partition,
    )


@pytest.fixture(scope="session")
def two_plane_clean_bundle():
    spec = ps.two_plane_scene(noise_sigma=0.0, outlier_fraction=0.0)
    target, reference, matches, labels, gt = ps.generate(spec)
    partition = ps.normalize_partition(labels)
    return dict(
        spec=spec, target=target, reference=reference, matches=matches,
        labels=labels, gt=gt, partition=partition,
    )


@pytest.fixture(scope="session")
def occlusion_bundle():
    spec = ps.occlusion_scene()
    target, reference, matches, labels, gt = ps.generate(spec)
    partition = ps.normalize_partition(labels)
    return dict(
        spec=spec, target=target, reference=reference, matches=matches,
        labels=labels, gt=gt, partition=partition,
    )


@pytest.fixture(scope="session")
def three_plane_bundle():
    spec = ps.three_plane_scene()
    target, reference, matches, labels, gt = ps.generate(spec)
    partition = ps.normalize_partition(labels)
    return dict(
        spec=spec, target=target, reference=reference, matches=matches,
        labels=labels, gt=gt, partition=partition,
    )


@pytest.fixture(scope="session")
def two_plane_stitch(two_plane_bundle):
    b = two_plane_bundle
    art = ps.stitch_pipeline(
        b["target"], b["reference"], b["partition"], b["matches"], ps.RunConfig(seed=1)
    )
    return art


@pytest.fixture(scope="session")
def occlusion_stitch(occlusion_bundle):
    b = occlusion_bundle
    return ps.stitch_pipeline(
        b["target"], b["reference"], b["partition"], b["matches"], ps.RunConfig(seed=2)
    )


def identity_bundle(dims=(160, 120), seed=3, matches=60):
    spec = ps.SceneSpec(
        dims=dims,
        planes=[ps.PlaneSpec(ps.Homography.identity(), depth=0, footprint=None)],
        texture_seed=seed,
        matches_per_plane=matches,
    )
    target, reference, m, labels, gt = ps.generate(spec)
    return dict(
        spec=spec, target=target, reference=reference, matches=m,
        labels=labels, gt=gt, partition=ps.normalize_partition(labels),
    )


@pytest.fixture(scope="session")
def identity_scene():
    return identity_bundle()
