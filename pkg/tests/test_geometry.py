import numpy as np
import pytest

from parastitch.errors import DegenerateConfiguration, EmptyResult, PointAtInfinity
from parastitch.geometry import (
    FundamentalMatrix,
    Homography,
    MatchSet,
    _canonicalize,
    apply_matrix,
    estimate_fundamental,
    estimate_homography_dlt,
    estimate_similarity,
    fundamental_inlier_filter,
    homography_point_jacobian,
    refine_homography_lm,
    robust_fundamental,
    sampson_distance,
    ste_residuals,
    symmetric_transfer_error,
    total_ste,
)


def random_projective(rng, scale=1e-4):
    m = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    m[2, :2] = scale * rng.standard_normal(2)
    m[2, 2] = 1.0
    return m


def matches_under(m, pts):
    return MatchSet(pts, apply_matrix(m, pts))


class TestDLT:
    def test_identity(self):
        pts = np.array([[0.0, 0], [100, 0], [0, 80], [100, 80]])
        h = estimate_homography_dlt(MatchSet(pts, pts))
        assert np.allclose(h.m, _canonicalize(np.eye(3)), atol=1e-12)

    def test_pure_translation(self):
        pts = np.array([[0.0, 0], [100, 0], [0, 80], [100, 80]])
        h = estimate_homography_dlt(MatchSet(pts, pts + np.array([10.0, 5.0])))
        expected = _canonicalize(np.array([[1, 0, 10], [0, 1, 5], [0, 0, 1.0]]))
        assert np.abs(h.m - expected).max() < 1e-12

    def test_recovers_random_projective(self):
        rng = np.random.default_rng(0)
        gt = random_projective(rng)
        pts = rng.uniform(0, 500, (6, 2))
        h = estimate_homography_dlt(matches_under(gt, pts))
        assert np.abs(h.m - _canonicalize(gt)).max() < 1e-9

    def test_too_few_matches(self):
        pts = np.array([[0.0, 0], [1, 0], [0, 1]])
        with pytest.raises(DegenerateConfiguration):
            estimate_homography_dlt(MatchSet(pts, pts))

    def test_collinear_targets_degenerate(self):
        pts = np.array([[0.0, 0], [1, 1], [2, 2], [3, 3], [4, 4]])
        rng = np.random.default_rng(1)
        with pytest.raises(DegenerateConfiguration):
            estimate_homography_dlt(MatchSet(pts, rng.uniform(0, 10, (5, 2))))


class TestSTE:
    def test_identity_zero(self):
        h = Homography.identity()
        assert symmetric_transfer_error(h, (3, 4), (3, 4)) == 0.0

    def test_symmetric_distances(self):
        h = Homography.identity()
        assert symmetric_transfer_error(h, (0, 0), (3, 4)) == pytest.approx(10.0)

    def test_translation(self):
        h = Homography.translation(10, 0)
        assert symmetric_transfer_error(h, (0, 0), (0, 0)) == pytest.approx(20.0)

    def test_point_at_infinity_sentinel(self):
        m = np.array([[1.0, 0, 0], [0, 1, 0], [-1e-2, 0, 1]])
        h = Homography(m)  # horizon at x = 100
        assert symmetric_transfer_error(h, (100.0, 0.0), (5.0, 5.0)) == np.inf

    def test_construction_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            m = random_projective(rng)
            h = Homography(m)
            p = rng.uniform(0, 300, 2)
            q = rng.uniform(0, 300, 2)
            a = symmetric_transfer_error(h, p, q)
            b = symmetric_transfer_error(h.inverse(), q, p)
            assert a == pytest.approx(b, rel=1e-9)


class TestRefineLM:
    def test_fixed_point_on_exact_data(self):
        rng = np.random.default_rng(3)
        gt = random_projective(rng)
        pts = rng.uniform(0, 400, (20, 2))
        ms = matches_under(gt, pts)
        h0 = Homography(gt)
        h, info = refine_homography_lm(h0, ms, full_output=True)
        assert info.initial_cost < 1e-9
        assert np.abs(h.m - h0.m).max() < 1e-12

    def test_recovers_from_perturbation(self):
        rng = np.random.default_rng(4)
        gt = random_projective(rng)
        pts = rng.uniform(0, 400, (50, 2))
        ms = matches_under(gt, pts)
        h0 = Homography(gt * (1 + 0.01 * rng.standard_normal((3, 3))))
        h, info = refine_homography_lm(h0, ms, full_output=True)
        assert info.final_cost < info.initial_cost
        assert info.final_cost / len(ms) < 1e-6

    def test_not_worse_than_dlt_on_noise(self):
        rng = np.random.default_rng(5)
        gt = random_projective(rng)
        pts = rng.uniform(0, 400, (60, 2))
        ref = apply_matrix(gt, pts) + rng.normal(0, 0.5, (60, 2))
        ms = MatchSet(pts, ref)
        h_dlt = estimate_homography_dlt(ms)
        h_lm = refine_homography_lm(h_dlt, ms)
        assert total_ste(h_lm, ms) <= total_ste(h_dlt, ms)

    def test_monotone_cost_history(self):
        rng = np.random.default_rng(6)
        gt = random_projective(rng)
        pts = rng.uniform(0, 400, (40, 2))
        ref = apply_matrix(gt, pts) + rng.normal(0, 1.0, (40, 2))
        ms = MatchSet(pts, ref)
        _, info = refine_homography_lm(estimate_homography_dlt(ms), ms, full_output=True)
        hist = np.asarray(info.cost_history)
        assert (np.diff(hist) <= 0).all()


class TestFundamental:
    def test_two_plane_exact(self, two_plane_clean_bundle):
        m = two_plane_clean_bundle["matches"]
        f = estimate_fundamental(m)
        assert sampson_distance(f, m).max() < 1e-6

    def test_rank_two(self, two_plane_clean_bundle):
        f = estimate_fundamental(two_plane_clean_bundle["matches"])
        s = np.linalg.svd(f.m, compute_uv=False)
        assert s[2] < 1e-13 * s[0]

    def test_single_homography_degenerate_or_all_inliers(self):
        rng = np.random.default_rng(7)
        gt = random_projective(rng)
        pts = rng.uniform(0, 400, (30, 2))
        ms = matches_under(gt, pts)
        try:
            f = estimate_fundamental(ms)
        except DegenerateConfiguration:
            return
        assert (sampson_distance(f, ms) < f.inlier_threshold).all()

    def test_seven_matches(self):
        pts = np.random.default_rng(8).uniform(0, 100, (7, 2))
        with pytest.raises(DegenerateConfiguration):
            estimate_fundamental(MatchSet(pts, pts + 1.0))


class TestInlierFilter:
    def test_consistent_matches_all_kept(self, two_plane_clean_bundle):
        m = two_plane_clean_bundle["matches"]
        f = estimate_fundamental(m)
        kept, mask = fundamental_inlier_filter(f, m)
        assert len(kept) == len(m) and mask.all()

    def test_injected_outliers_removed(self, two_plane_clean_bundle):
        clean = two_plane_clean_bundle["matches"]
        idx = np.random.default_rng(9).choice(len(clean), 100, replace=False)
        base = clean.subset(idx)
        rng = np.random.default_rng(10)
        w, h = two_plane_clean_bundle["spec"].dims
        bad_t = rng.uniform([0, 0], [w, h], (20, 2))
        bad_r = rng.uniform([0, 0], [w, h], (20, 2))
        combined = MatchSet(
            np.vstack([base.target, bad_t]), np.vstack([base.ref, bad_r])
        )
        f = estimate_fundamental(base)  # filter contract: a valid F is given
        _, mask = fundamental_inlier_filter(f, combined)
        assert mask[:100].sum() >= 98
        assert (~mask[100:]).sum() >= 18

    def test_zero_threshold_empties(self, two_plane_bundle):
        m = two_plane_bundle["matches"]
        f = estimate_fundamental(m)
        with pytest.raises(EmptyResult):
            fundamental_inlier_filter(FundamentalMatrix(f.m, 0.0), m)

    def test_robust_estimation_survives_outliers(self, two_plane_bundle):
        m = two_plane_bundle["matches"]
        gt = two_plane_bundle["gt"]
        f = robust_fundamental(m, seed=0)
        mask = sampson_distance(f, m) < 3.0
        inl = ~gt.outlier_flags
        assert mask[inl].mean() > 0.98


class TestSimilarity:
    def test_pure_rotation(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-100, 100, (15, 2))
        ang = np.pi / 6
        r = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        s = estimate_similarity(MatchSet(pts, pts @ r.T))
        assert s.scale == pytest.approx(1.0, abs=1e-9)
        assert s.angle == pytest.approx(ang, abs=1e-9)
        assert np.abs(s.translation).max() < 1e-9

    def test_scale_translation(self):
        rng = np.random.default_rng(12)
        pts = rng.uniform(0, 50, (10, 2))
        s = estimate_similarity(MatchSet(pts, 2.0 * pts + np.array([5.0, -3.0])))
        assert s.scale == pytest.approx(2.0, abs=1e-9)
        assert s.angle == pytest.approx(0.0, abs=1e-9)
        assert s.translation == pytest.approx((5.0, -3.0), abs=1e-9)

    def test_least_squares_matches_normal_equations(self):
        rng = np.random.default_rng(13)
        gt = random_projective(rng, scale=3e-4)
        pts = rng.uniform(0, 300, (40, 2))
        ms = matches_under(gt, pts)
        s = estimate_similarity(ms)
        # independent oracle: linear LSQ in (a, b, tx, ty) for [[a,-b],[b,a]] p + t
        rows = []
        rhs = []
        for (x, y), (u, v) in zip(ms.target, ms.ref):
            rows.append([x, -y, 1.0, 0.0])
            rhs.append(u)
            rows.append([y, x, 0.0, 1.0])
            rhs.append(v)
        sol, *_ = np.linalg.lstsq(np.asarray(rows), np.asarray(rhs), rcond=None)
        a, b, tx, ty = sol
        assert s.scale == pytest.approx(np.hypot(a, b), rel=1e-9)
        assert s.angle == pytest.approx(np.arctan2(b, a), abs=1e-9)
        assert s.translation == pytest.approx((tx, ty), abs=1e-6)

    def test_coincident_points_degenerate(self):
        pts = np.zeros((5, 2))
        ref = np.arange(10.0).reshape(5, 2)
        with pytest.raises(DegenerateConfiguration):
            estimate_similarity(MatchSet(pts, ref))


class TestJacobian:
    def test_identity(self):
        j = homography_point_jacobian(Homography.identity(), (10.0, 20.0))
        assert np.allclose(j, np.eye(2))

    def test_affine_constant(self):
        m = np.array([[2.0, 0.5, 3], [-0.25, 1.5, -7], [0, 0, 1.0]])
        h = Homography(m)
        for at in [(0.0, 0.0), (50.0, -20.0), (1e3, 1e3)]:
            j = homography_point_jacobian(h, at)
            assert np.allclose(j, m[:2, :2], atol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        h = Homography(random_projective(rng, scale=5e-4))
        at = np.array([100.0, 50.0])
        j = homography_point_jacobian(h, at)
        eps = 1e-4
        fd = np.zeros((2, 2))
        for k in range(2):
            d = np.zeros(2)
            d[k] = eps
            fd[:, k] = (h.apply(at + d)[0] - h.apply(at - d)[0]) / (2 * eps)
        assert np.abs(j - fd).max() / np.abs(fd).max() < 1e-5

    def test_horizon_raises(self):
        m = np.array([[1.0, 0, 0], [0, 1, 0], [-1e-2, 0, 1]])
        with pytest.raises(PointAtInfinity):
            homography_point_jacobian(Homography(m), (100.0, 0.0))


class TestInvariants:
    def test_canonicalization_idempotent(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            m = rng.standard_normal((3, 3))
            if abs(np.linalg.det(m)) < 1e-6:
                continue
            c = _canonicalize(m)
            assert np.array_equal(_canonicalize(c), c)

    def test_dlt_exactness_random(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            gt = random_projective(rng)
            pts = rng.uniform(0, 600, (8, 2))
            h = estimate_homography_dlt(matches_under(gt, pts))
            assert np.abs(h.m - _canonicalize(gt)).max() < 1e-9

    def test_jacobian_finite_difference_sweep(self):
        rng = np.random.default_rng(17)
        checked = 0
        while checked < 100:
            h = Homography(random_projective(rng, scale=3e-4))
            at = rng.uniform(0, 500, 2)
            w = h.m[2, 0] * at[0] + h.m[2, 1] * at[1] + h.m[2, 2]
            if abs(w) < 0.2:  # stay away from the horizon line
                continue
            j = homography_point_jacobian(h, at)
            eps = 1e-4
            fd = np.zeros((2, 2))
            for k in range(2):
                d = np.zeros(2)
                d[k] = eps
                fd[:, k] = (h.apply(at + d)[0] - h.apply(at - d)[0]) / (2 * eps)
            assert np.abs(j - fd).max() / max(np.abs(fd).max(), 1e-12) < 1e-5
            checked += 1

    def test_fundamental_rank_always_two(self):
        rng = np.random.default_rng(18)
        for seed in range(5):
            import parastitch as ps

            spec = ps.two_plane_scene(seed=seed + 100, matches_per_plane=40,
                                      noise_sigma=0.3)
            _, _, m, _, _ = ps.generate(spec)
            f = estimate_fundamental(m)
            s = np.linalg.svd(f.m, compute_uv=False)
            assert s[2] < 1e-13 * s[0]

    def test_matchset_rejects_duplicates(self):
        pts = np.array([[1.0, 2], [1.0, 2]])
        with pytest.raises(ValueError):
            MatchSet(pts, pts)

    def test_ste_residuals_vectorized_agrees(self):
        rng = np.random.default_rng(19)
        h = Homography(random_projective(rng))
        pts = rng.uniform(0, 300, (10, 2))
        ref = rng.uniform(0, 300, (10, 2))
        ms = MatchSet(pts, ref)
        vec = ste_residuals(h.m, ms)
        for i in range(10):
            assert vec[i] == pytest.approx(
                symmetric_transfer_error(h, pts[i], ref[i]), rel=1e-12
            )
