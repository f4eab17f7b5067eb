import numpy as np
import pytest

import parastitch as ps
from parastitch.errors import InvalidSpec
from parastitch.geometry import Homography, symmetric_transfer_error
from parastitch.synthscene import PlaneSpec, SceneSpec, generate, plane_texture


class TestIdentityScene:
    def test_target_equals_reference_and_exact_matches(self, identity_scene):
        b = identity_scene
        assert np.array_equal(b["target"].pixels, b["reference"].pixels)
        for p, q in zip(b["matches"].target, b["matches"].ref):
            assert symmetric_transfer_error(Homography.identity(), p, q) < 1e-9


class TestOcclusionGeometry:
    def test_translation_pair_strip_width(self):
        # background shifts -40, foreground -90: parallax 50 px; footprints
        # abut at x = 200, so the occluded in-bounds strip is exactly
        # x in [150, 200) wherever the foreground spans the full height
        w, h = 320, 120
        fg_poly = np.array([[200.0, 0.0], [w, 0.0], [w, h], [200.0, h]])
        spec = SceneSpec(
            dims=(w, h),
            planes=[
                PlaneSpec(Homography.translation(-90, 0), depth=0, footprint=fg_poly),
                PlaneSpec(Homography.translation(-40, 0), depth=1, footprint=None),
            ],
            texture_seed=5,
            matches_per_plane=30,
        )
        _, _, _, labels, gt = generate(spec)
        corr = gt.correspondence
        inb = (corr[..., 0] >= 0) & (corr[..., 0] < w) & (corr[..., 1] >= 0) & (corr[..., 1] < h)
        strip = gt.occluded & inb
        row = strip[h // 2]
        xs = np.nonzero(row)[0]
        assert xs.min() == 150
        assert xs.max() == 199
        assert len(xs) == 50

    def test_reference_shows_nearer_plane(self):
        w, h = 320, 120
        fg_poly = np.array([[200.0, 0.0], [w, 0.0], [w, h], [200.0, h]])
        spec = SceneSpec(
            dims=(w, h),
            planes=[
                PlaneSpec(Homography.translation(-90, 0), depth=0, footprint=fg_poly),
                PlaneSpec(Homography.translation(-40, 0), depth=1, footprint=None),
            ],
            texture_seed=5,
            matches_per_plane=30,
        )
        _, reference, _, _, _ = generate(spec)
        # reference x in [110, 230) is the fg image: its texture must match
        # the fg texture sampled at x + 90
        y, x = h // 2, 150
        expect = plane_texture(np.array([x + 90.0]), np.array([float(y)]), 0, 5)[0]
        got = reference.pixels[y, x].astype(float)
        assert np.abs(got - np.rint(expect)).max() <= 1.0


class TestOutliers:
    def test_exact_outlier_count(self):
        spec = ps.two_plane_scene(matches_per_plane=150, outlier_fraction=0.2)
        _, _, m, _, gt = generate(spec)
        assert len(m) == 300
        assert gt.outlier_flags.sum() == 60

    def test_outliers_unexplained_by_any_plane(self):
        spec = ps.two_plane_scene(matches_per_plane=80, outlier_fraction=0.25)
        _, _, m, _, gt = generate(spec)
        for i in np.nonzero(gt.outlier_flags)[0]:
            best = min(
                symmetric_transfer_error(h, m.target[i], m.ref[i])
                for h in gt.homographies
            )
            assert best > spec.outlier_min_error


class TestOracleSoundness:
    def test_inlier_ste_bounded_by_noise(self):
        sigma = 0.7
        spec = ps.two_plane_scene(noise_sigma=sigma, matches_per_plane=120)
        _, _, m, _, gt = generate(spec)
        for i in np.nonzero(~gt.outlier_flags)[0]:
            h = gt.homographies[gt.match_plane_ids[i] - 1]
            assert symmetric_transfer_error(h, m.target[i], m.ref[i]) < 3 * sigma + 1e-9


class TestDeterminism:
    def test_equal_seeds_bitwise_equal(self):
        spec_a = ps.three_plane_scene(seed=42)
        spec_b = ps.three_plane_scene(seed=42)
        ta, ra, ma, la, ga = generate(spec_a)
        tb, rb, mb, lb, gb = generate(spec_b)
        assert np.array_equal(ta.pixels, tb.pixels)
        assert np.array_equal(ra.pixels, rb.pixels)
        assert np.array_equal(ma.target, mb.target)
        assert np.array_equal(ma.ref, mb.ref)
        assert np.array_equal(la.labels, lb.labels)
        assert np.array_equal(ga.occluded, gb.occluded)

    def test_different_seeds_differ(self):
        ta, *_ = generate(ps.two_plane_scene(seed=1, matches_per_plane=20))
        tb, *_ = generate(ps.two_plane_scene(seed=2, matches_per_plane=20))
        assert not np.array_equal(ta.pixels, tb.pixels)


class TestValidation:
    def test_incomplete_cover_rejected(self):
        poly = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
        spec = SceneSpec(
            dims=(64, 48),
            planes=[PlaneSpec(Homography.identity(), depth=0, footprint=poly)],
            matches_per_plane=5,
        )
        with pytest.raises(InvalidSpec):
            generate(spec)

    def test_duplicate_depths_rejected(self):
        spec = SceneSpec(
            dims=(64, 48),
            planes=[
                PlaneSpec(Homography.identity(), depth=0, footprint=None),
                PlaneSpec(Homography.translation(5, 0), depth=0, footprint=None),
            ],
            matches_per_plane=5,
        )
        with pytest.raises(InvalidSpec):
            generate(spec)

    def test_bad_outlier_fraction_rejected(self):
        spec = SceneSpec(
            dims=(64, 48),
            planes=[PlaneSpec(Homography.identity(), depth=0, footprint=None)],
            outlier_fraction=1.0,
        )
        with pytest.raises(InvalidSpec):
            generate(spec)


class TestTextureDiscrimination:
    def test_planes_photometrically_distinct(self):
        xs, ys = np.meshgrid(np.arange(0, 320, 5, dtype=float), np.arange(0, 240, 5, dtype=float))
        t0 = plane_texture(xs, ys, 0, 7)
        t1 = plane_texture(xs, ys, 1, 7)
        d = np.linalg.norm(t0 - t1, axis=-1).mean()
        assert d > 20.0
