"""Planar geometry primitives: homographies, similarities, fundamental matrices.

Conventions: a Homography maps target-image points to reference-image points.
The fundamental matrix satisfies p~^T F q~ = 0 with p in the target image
(left) and q in the reference image (right). All point arrays are (N, 2)
float64 in pixel units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, PointAtInfinity

W_EPS = 1e-12  # perspective-division denominator cutoff


def _canonicalize(m: np.ndarray) -> np.ndarray:
    """Scale to Frobenius norm 1 and fix the sign (m[2,2] >= 0 when nonzero)."""
    m = np.asarray(m, dtype=float)
    norm = np.linalg.norm(m)
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateConfiguration("matrix has zero or non-finite norm")
    if abs(norm - 1.0) > 4e-16:  # keep canonicalization bitwise idempotent
        m = m / norm
    if m[2, 2] != 0.0:
        if m[2, 2] < 0:
            m = -m
    else:
        # deterministic sign when the corner vanishes: first nonzero entry positive
        flat = m.ravel()
        nz = np.nonzero(flat)[0]
        if nz.size and flat[nz[0]] < 0:
            m = -m
    return m


class Homography:
    """3x3 invertible projective map, stored at canonical scale."""

    __slots__ = ("m",)

    def __init__(self, m: np.ndarray):
        m = _canonicalize(m)
        if abs(np.linalg.det(m)) < 1e-15:
            raise DegenerateConfiguration("homography matrix is singular")
        self.m = m
        self.m.setflags(write=False)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0, tx], [0, 1.0, ty], [0, 0, 1.0]]))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map (N,2) points; rows with |w| < cutoff come back as +inf."""
        return apply_matrix(self.m, pts)

    def __repr__(self):
        return f"Homography({self.m.tolist()})"


def apply_matrix(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = ph @ m.T
    w = q[:, 2]
    out = np.full((len(pts), 2), np.inf)
    ok = np.abs(w) >= W_EPS
    out[ok] = q[ok, :2] / w[ok, None]
    return out


@dataclass(frozen=True)
class Similarity:
    """4-DOF similarity q = scale * R(angle) p + t, scale > 0."""

    scale: float
    angle: float
    translation: tuple[float, float]

    def matrix(self) -> np.ndarray:
        c, s = self.scale * np.cos(self.angle), self.scale * np.sin(self.angle)
        tx, ty = self.translation
        return np.array([[c, -s, tx], [s, c, ty], [0.0, 0.0, 1.0]])

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return pts @ self.jacobian().T + np.asarray(self.translation)

    def jacobian(self) -> np.ndarray:
        """Constant 2x2 linear part (exact derivative everywhere)."""
        c, s = self.scale * np.cos(self.angle), self.scale * np.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def as_homography(self) -> Homography:
        return Homography(self.matrix())


class MatchSet:
    """Ordered feature matches between target and reference images."""

    __slots__ = ("target", "ref")

    def __init__(self, target: np.ndarray, ref: np.ndarray):
        target = np.atleast_2d(np.asarray(target, dtype=float))
        ref = np.atleast_2d(np.asarray(ref, dtype=float))
        if target.shape != ref.shape or target.ndim != 2 or target.shape[1] != 2:
            raise ValueError("target and ref must both be (N,2)")
        if len(target) < 1:
            raise ValueError("need at least one match")
        if not (np.isfinite(target).all() and np.isfinite(ref).all()):
            raise ValueError("match coordinates must be finite")
        pairs = np.column_stack([target, ref])
        if len(np.unique(pairs, axis=0)) != len(pairs):
            raise ValueError("duplicate (target, ref) pairs")
        self.target = target
        self.ref = ref
        self.target.setflags(write=False)
        self.ref.setflags(write=False)

    def __len__(self):
        return len(self.target)

    def subset(self, idx) -> "MatchSet":
        return MatchSet(self.target[idx], self.ref[idx])


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 epipolar constraint matrix with its Sampson inlier threshold."""

    m: np.ndarray
    inlier_threshold: float = 3.0


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """3x3 transform centering the points with mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    if d < 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array(
        [[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1.0]]
    )


def estimate_homography_dlt(matches: MatchSet) -> Homography:
    """Least-squares algebraic homography with Hartley normalization."""
    n = len(matches)
    if n < 4:
        raise DegenerateConfiguration(f"need >= 4 matches, got {n}")
    tp = _hartley_normalization(matches.target)
    tq = _hartley_normalization(matches.ref)
    p = apply_matrix(tp, matches.target)
    q = apply_matrix(tq, matches.ref)

    a = np.zeros((2 * n, 9))
    ph = np.column_stack([p, np.ones(n)])
    a[0::2, 0:3] = ph
    a[0::2, 6:9] = -q[:, 0, None] * ph
    a[1::2, 3:6] = ph
    a[1::2, 6:9] = -q[:, 1, None] * ph

    _, sv, vt = np.linalg.svd(a)
    if sv[7] < 1e-9 * sv[0]:
        raise DegenerateConfiguration("rank-deficient design matrix")
    h = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(tq) @ h @ tp)


def symmetric_transfer_error(h: Homography, target_pt, ref_pt) -> float:
    """Forward plus backward transfer distance for one match (Eq. of the data term)."""
    fwd = h.apply(np.asarray(target_pt, dtype=float))[0]
    bwd = h.inverse().apply(np.asarray(ref_pt, dtype=float))[0]
    if not (np.isfinite(fwd).all() and np.isfinite(bwd).all()):
        return np.inf
    return float(
        np.linalg.norm(fwd - np.asarray(ref_pt, dtype=float))
        + np.linalg.norm(bwd - np.asarray(target_pt, dtype=float))
    )


def ste_residuals(h_m: np.ndarray, matches: MatchSet) -> np.ndarray:
    """Per-match symmetric transfer errors for a raw 3x3 matrix, vectorized."""
    try:
        inv = np.linalg.inv(h_m)
    except np.linalg.LinAlgError:
        return np.full(len(matches), np.inf)
    fwd = apply_matrix(h_m, matches.target)
    bwd = apply_matrix(inv, matches.ref)
    err = np.linalg.norm(fwd - matches.ref, axis=1) + np.linalg.norm(
        bwd - matches.target, axis=1
    )
    err[~np.isfinite(fwd).all(axis=1) | ~np.isfinite(bwd).all(axis=1)] = np.inf
    return err


def total_ste(h: Homography, matches: MatchSet) -> float:
    return float(np.sum(ste_residuals(h.m, matches)))


@dataclass
class RefineInfo:
    iterations: int = 0
    initial_cost: float = np.inf
    final_cost: float = np.inf
    singular_fallback: bool = False
    converged: bool = False
    cost_history: list[float] = field(default_factory=list)


def _lm_residual_vector(h_m: np.ndarray, matches: MatchSet) -> np.ndarray:
    """Stacked forward/backward coordinate residuals (length 4N)."""
    try:
        inv = np.linalg.inv(h_m)
    except np.linalg.LinAlgError:
        return np.full(4 * len(matches), 1e6)
    fwd = apply_matrix(h_m, matches.target) - matches.ref
    bwd = apply_matrix(inv, matches.ref) - matches.target
    r = np.concatenate([fwd.ravel(), bwd.ravel()])
    return np.nan_to_num(r, nan=1e6, posinf=1e6, neginf=-1e6)


def refine_homography_lm(
    initial: Homography,
    matches: MatchSet,
    max_iters: int = 100,
    rel_tol: float = 1e-8,
    full_output: bool = False,
):
    """Levenberg-Marquardt refinement of the total symmetric transfer error.

    Steps are computed on squared coordinate residuals; a step is accepted
    only if the true (unsquared) STE total decreases, so the returned cost
    never exceeds the initial one. One matrix entry stays frozen to remove
    the scale gauge.
    """
    if len(matches) < 4:
        raise DegenerateConfiguration("need >= 4 matches to refine")
    m0 = initial.m.copy()
    # freeze m[2,2] at its canonical value; fall back to the largest entry
    frozen = 8 if abs(m0.ravel()[8]) > 0.1 else int(np.argmax(np.abs(m0.ravel())))
    free = [i for i in range(9) if i != frozen]

    info = RefineInfo()
    theta = m0.ravel()[free].copy()

    def build(th):
        v = np.empty(9)
        v[free] = th
        v[frozen] = m0.ravel()[frozen]
        return v.reshape(3, 3)

    def true_cost(mm):
        return float(np.sum(ste_residuals(mm, matches)))

    cost = true_cost(m0)
    info.initial_cost = cost
    info.cost_history.append(cost)
    best_m = m0

    def jac(th):
        r0 = _lm_residual_vector(build(th), matches)
        j = np.empty((r0.size, len(th)))
        for k in range(len(th)):
            step = 1e-7 * max(1.0, abs(th[k]))
            tp = th.copy()
            tp[k] += step
            tm = th.copy()
            tm[k] -= step
            j[:, k] = (
                _lm_residual_vector(build(tp), matches)
                - _lm_residual_vector(build(tm), matches)
            ) / (2 * step)
        return r0, j

    mu = None
    for it in range(max_iters):
        r, j = jac(theta)
        jtj = j.T @ j
        g = j.T @ r
        if mu is None:
            mu = 1e-3 * np.trace(jtj) / len(theta)
            if not np.isfinite(mu) or mu <= 0:
                mu = 1e-3
        accepted = False
        for _ in range(30):  # inner damping escalation
            try:
                delta = np.linalg.solve(jtj + mu * np.eye(len(theta)), -g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            cand = build(theta + delta)
            if abs(np.linalg.det(cand)) < 1e-15:
                info.singular_fallback = True
                mu *= 10
                continue
            c_new = true_cost(cand)
            if c_new < cost:
                theta = theta + delta
                rel = (cost - c_new) / max(cost, 1e-300)
                cost = c_new
                best_m = cand
                mu = max(mu / 10, 1e-15)
                accepted = True
                info.cost_history.append(cost)
                break
            mu *= 10
            if mu > 1e14:
                break
        info.iterations = it + 1
        if not accepted:
            info.converged = True
            break
        if rel < rel_tol or cost == 0.0:
            info.converged = True
            break
    info.final_cost = cost
    result = Homography(best_m)
    if full_output:
        return result, info
    return result


def estimate_fundamental(matches: MatchSet, inlier_threshold: float = 3.0) -> FundamentalMatrix:
    """Normalized 8-point fundamental matrix with rank-2 enforcement."""
    n = len(matches)
    if n < 8:
        raise DegenerateConfiguration(f"need >= 8 matches, got {n}")
    tp = _hartley_normalization(matches.target)
    tq = _hartley_normalization(matches.ref)
    p = apply_matrix(tp, matches.target)
    q = apply_matrix(tq, matches.ref)

    ph = np.column_stack([p, np.ones(n)])
    qh = np.column_stack([q, np.ones(n)])
    # rows of kron(p~, q~) so that p~^T F q~ = a . vec(F)
    a = (ph[:, :, None] * qh[:, None, :]).reshape(n, 9)
    _, sv, vt = np.linalg.svd(a)
    if sv[0] / max(sv[-2], 1e-300) > 1e12:
        raise DegenerateConfiguration("design matrix numerically rank-deficient")
    f = vt[-1].reshape(3, 3)
    # rank-2: zero the smallest singular value
    u, s, v2 = np.linalg.svd(f)
    s[2] = 0.0
    f = u @ np.diag(s) @ v2
    f = tp.T @ f @ tq
    f = f / np.linalg.norm(f)
    if f[2, 2] < 0 or (f[2, 2] == 0 and f.ravel()[np.nonzero(f.ravel())[0][0]] < 0):
        f = -f
    return FundamentalMatrix(f, inlier_threshold)


def sampson_distance(f: FundamentalMatrix, matches: MatchSet) -> np.ndarray:
    """First-order geometric (Sampson) distance in pixels, per match."""
    ph = np.column_stack([matches.target, np.ones(len(matches))])
    qh = np.column_stack([matches.ref, np.ones(len(matches))])
    fq = qh @ f.m.T          # F q~
    ftp = ph @ f.m           # F^T p~
    num = np.abs(np.sum(ph * fq, axis=1))
    den = np.sqrt(fq[:, 0] ** 2 + fq[:, 1] ** 2 + ftp[:, 0] ** 2 + ftp[:, 1] ** 2)
    return num / np.maximum(den, 1e-300)


def fundamental_inlier_filter(f: FundamentalMatrix, matches: MatchSet):
    """Keep matches within the Sampson threshold; preserves order.

    Returns (filtered MatchSet, boolean keep mask).
    """
    from .errors import EmptyResult

    keep = sampson_distance(f, matches) < f.inlier_threshold
    if not keep.any():
        raise EmptyResult("no match survives the epipolar filter")
    return matches.subset(keep), keep


def robust_fundamental(
    matches: MatchSet,
    inlier_threshold: float = 3.0,
    seed: int = 0,
    confidence: float = 0.995,
    max_trials: int = 500,
) -> FundamentalMatrix:
    """Seeded 8-point RANSAC plus a final least-squares fit on the consensus.

    The plain algebraic estimate is easily wrecked by gross outliers; this
    wrapper plays the role of the conventional RANSAC pass feature matchers
    run before epipolar filtering.
    """
    import math

    n = len(matches)
    if n < 8:
        raise DegenerateConfiguration(f"need >= 8 matches, got {n}")
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = 0
    needed = max_trials
    t = 0
    while t < min(needed, max_trials):
        t += 1
        pick = rng.choice(n, size=8, replace=False)
        try:
            f = estimate_fundamental(matches.subset(pick), inlier_threshold)
        except DegenerateConfiguration:
            continue
        mask = sampson_distance(f, matches) < inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            w = count / n
            if w >= 1.0:
                break
            needed = max(
                20,
                math.ceil(
                    math.log(1 - confidence) / math.log(max(1.0 - w**8, 1e-300))
                ),
            )
    if best_count < 8:
        raise DegenerateConfiguration("no epipolar consensus found")
    return estimate_fundamental(matches.subset(best_mask), inlier_threshold)


def estimate_similarity(matches: MatchSet) -> Similarity:
    """Closed-form least-squares 4-DOF similarity via the complex formulation."""
    if len(matches) < 2:
        raise DegenerateConfiguration("need >= 2 matches")
    z = matches.target[:, 0] + 1j * matches.target[:, 1]
    w = matches.ref[:, 0] + 1j * matches.ref[:, 1]
    if np.allclose(matches.target, matches.target[0]):
        raise DegenerateConfiguration("all target points coincide")
    # minimize sum |a z + b - w|^2 over complex a, b
    n = len(z)
    zc = z - z.mean()
    wc = w - w.mean()
    denom = np.sum(np.abs(zc) ** 2)
    if denom < 1e-300:
        raise DegenerateConfiguration("degenerate target spread")
    a = np.sum(np.conj(zc) * wc) / denom
    b = w.mean() - a * z.mean()
    scale = abs(a)
    if scale < 1e-12:
        raise DegenerateConfiguration("optimal similarity collapses to a point")
    return Similarity(
        scale=float(scale),
        angle=float(np.angle(a)),
        translation=(float(b.real), float(b.imag)),
    )


def homography_point_jacobian(h: Homography, at) -> np.ndarray:
    """Analytic 2x2 Jacobian of p -> dehomogenize(H p~) at the given point."""
    x, y = float(at[0]), float(at[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) < W_EPS:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity")
    fx = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
    fy = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
    return np.array(
        [
            [(m[0, 0] - m[2, 0] * fx) / w, (m[0, 1] - m[2, 1] * fx) / w],
            [(m[1, 0] - m[2, 0] * fy) / w, (m[1, 1] - m[2, 1] * fy) / w],
        ]
    )
