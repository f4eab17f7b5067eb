"""Energy-based partition of feature matches into homography-consistent subsets.

Labels are indices into a ModelSet: 0 is the outlier pseudo-model with
constant cost gamma, l >= 1 refers to models[l-1] with cost equal to the
symmetric transfer error. The energy adds a Potts smoothness term over a
segmentation-restricted Delaunay neighborhood and a per-model label cost.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import DegenerateConfiguration, NoModelFound
from .geometry import (
    Homography,
    MatchSet,
    estimate_homography_dlt,
    refine_homography_lm,
    ste_residuals,
)
from .segmentation import OverlapMask

log = logging.getLogger(__name__)

CAP = 1e15  # stand-in for infinite data cost inside cut capacities
MIN_MODEL_SUPPORT = 8
RANSAC_CONFIDENCE = 0.995
RANSAC_MAX_TRIALS = 2000


@dataclass(frozen=True)
class EnergyParams:
    lam: float = 20.0
    beta: float = 10.0
    gamma: float = 200.0
    min_remaining: int = 50


@dataclass(frozen=True)
class EnergyBreakdown:
    data: float
    smooth: float
    label_cost: float

    @property
    def total(self) -> float:
        return self.data + self.smooth + self.label_cost


@dataclass(frozen=True)
class ModelSet:
    """Fitted homographies; the outlier label 0 is implicit."""

    models: list

    def __len__(self):
        return len(self.models)


@dataclass(frozen=True)
class NeighborGraph:
    """Unordered match-index pairs eligible for the smoothness penalty."""

    edges: np.ndarray  # (E, 2) int, i < j, deduplicated

    @classmethod
    def empty(cls) -> "NeighborGraph":
        return cls(np.zeros((0, 2), dtype=int))


def delaunay_edges(points: np.ndarray) -> np.ndarray:
    """All unique edges of the Delaunay triangulation, (E,2) with i < j."""
    if len(points) < 3:
        return np.zeros((0, 2), dtype=int)
    try:
        tri = Delaunay(points)
    except QhullError:
        log.warning("Delaunay failed (collinear points?); neighborhood is empty")
        return np.zeros((0, 2), dtype=int)
    s = tri.simplices
    pairs = np.vstack([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


def build_neighborhood(
    matches: MatchSet,
    content_ids: np.ndarray,
    overlap: OverlapMask,
    use_contents: bool = True,
) -> NeighborGraph:
    """Delaunay edges kept only inside a shared overlap content.

    With use_contents=False (the triangulation-only ablation) every Delaunay
    edge is kept.
    """
    edges = delaunay_edges(matches.target)
    if len(edges) == 0 or not use_contents:
        return NeighborGraph(edges)
    h, w = overlap.mask.shape
    xs = np.clip(np.floor(matches.target[:, 0]).astype(int), 0, w - 1)
    ys = np.clip(np.floor(matches.target[:, 1]).astype(int), 0, h - 1)
    in_overlap = overlap.mask[ys, xs]
    i, j = edges[:, 0], edges[:, 1]
    keep = (
        in_overlap[i]
        & in_overlap[j]
        & (content_ids[i] == content_ids[j])
        & (content_ids[i] > 0)
    )
    return NeighborGraph(edges[keep])


def data_cost_matrix(models: list, matches: MatchSet, gamma: float) -> np.ndarray:
    """(L+1, N) costs; row 0 is the outlier label."""
    rows = [np.full(len(matches), gamma)]
    for h in models:
        rows.append(ste_residuals(h.m, matches))
    return np.vstack(rows)


def _energy_from_costs(
    costs: np.ndarray, assign: np.ndarray, edges: np.ndarray, params: EnergyParams
) -> EnergyBreakdown:
    data = float(costs[assign, np.arange(len(assign))].sum())
    if len(edges):
        smooth = params.lam * float((assign[edges[:, 0]] != assign[edges[:, 1]]).sum())
    else:
        smooth = 0.0
    used = np.unique(assign)
    label_cost = params.beta * float((used > 0).sum())
    return EnergyBreakdown(data=data, smooth=smooth, label_cost=label_cost)


def energy(
    models: ModelSet,
    assign: np.ndarray,
    graph: NeighborGraph,
    matches: MatchSet,
    params: EnergyParams,
) -> EnergyBreakdown:
    """Data + smoothness + label-cost decomposition of a labeling."""
    assign = np.asarray(assign)
    if len(assign) != len(matches):
        raise ValueError("assignment length != match count")
    if assign.min() < 0 or assign.max() > len(models):
        raise ValueError("label out of range")
    costs = data_cost_matrix(models.models, matches, params.gamma)
    return _energy_from_costs(costs, assign, graph.edges, params)


def _expansion_move(
    costs: np.ndarray,
    assign: np.ndarray,
    edges: np.ndarray,
    lam: float,
    alpha: int,
) -> np.ndarray:
    """Optimal binary move 'switch any subset of matches to label alpha'."""
    n = len(assign)
    variable = assign != alpha
    if not variable.any():
        return assign
    theta1 = np.where(variable, np.minimum(costs[alpha], CAP), 0.0)
    theta0 = np.where(variable, np.minimum(costs[assign, np.arange(n)], CAP), 0.0)

    g = nx.DiGraph()
    pair_edges = []
    for i, j in edges:
        vi, vj = variable[i], variable[j]
        if not vi and not vj:
            continue
        if vi and not vj:  # j fixed at alpha
            theta0[i] += lam  # assign[i] != alpha by construction
            continue
        if vj and not vi:
            theta0[j] += lam
            continue
        a = lam if assign[i] != assign[j] else 0.0
        b = lam  # i keeps, j -> alpha
        c = lam  # i -> alpha, j keeps
        d = 0.0
        rho = b + c - a - d
        assert rho >= 0.0, "non-submodular pairwise term"
        theta1[i] += d - b
        theta1[j] += b - a
        if rho > 0:
            pair_edges.append((int(j), int(i), rho))

    idx = np.nonzero(variable)[0]
    for i in idx:
        a, b = theta0[i], theta1[i]
        lo = min(a, b)
        cap_sink = a - lo
        cap_src = b - lo
        if cap_src > 0:
            g.add_edge("s", int(i), capacity=float(cap_src))
        if cap_sink > 0:
            g.add_edge(int(i), "t", capacity=float(cap_sink))
    for u, v, rho in pair_edges:
        if g.has_edge(u, v):
            g[u][v]["capacity"] += float(rho)
        else:
            g.add_edge(u, v, capacity=float(rho))

    if "s" not in g:
        g.add_node("s")
    if "t" not in g:
        g.add_node("t")
    _, (s_side, _) = nx.minimum_cut(g, "s", "t")
    new_assign = assign.copy()
    # sink-side nodes switch to alpha; nodes absent from the graph are
    # energy-ties and keep their current label
    sink_nodes = [int(i) for i in idx if int(i) in g and int(i) not in s_side]
    new_assign[sink_nodes] = alpha
    return new_assign


def expand_labels(
    models: ModelSet,
    assign: np.ndarray,
    graph: NeighborGraph,
    matches: MatchSet,
    params: EnergyParams,
    costs: np.ndarray | None = None,
) -> np.ndarray:
    """Sweep expansion moves over every label until a full sweep changes nothing.

    Each move is solved exactly by min-cut; it is committed only when the
    total energy strictly decreases, so the sequence of accepted states is
    monotone.
    """
    assign = np.asarray(assign).copy()
    if costs is None:
        costs = data_cost_matrix(models.models, matches, params.gamma)
    best = _energy_from_costs(costs, assign, graph.edges, params).total
    nlabels = costs.shape[0]
    while True:
        changed = False
        for alpha in range(nlabels):
            cand = _expansion_move(costs, assign, graph.edges, params.lam, alpha)
            if np.array_equal(cand, assign):
                continue
            e = _energy_from_costs(costs, cand, graph.edges, params).total
            if e < best:
                assign = cand
                best = e
                changed = True
        if not changed:
            return assign


def init_models_iterative_ransac(
    matches: MatchSet,
    params: EnergyParams,
    seed: int,
    inlier_threshold: float = 3.0,
) -> ModelSet:
    """Peel homographies off with seeded 4-point RANSAC plus LM polish.

    Rounds continue until fewer than params.min_remaining matches are left
    unclaimed or a round cannot gather MIN_MODEL_SUPPORT inliers.
    """
    n = len(matches)
    if n < 4:
        raise DegenerateConfiguration(f"need >= 4 matches, got {n}")
    rng = np.random.default_rng(seed)
    remaining = np.arange(n)
    models = []
    while True:
        if models and len(remaining) < params.min_remaining:
            break
        if len(remaining) < 4:
            break
        sub = matches.subset(remaining)
        found = _ransac_round(sub, rng, inlier_threshold)
        if found is None:
            break
        h, inlier_mask = found
        models.append(h)
        remaining = remaining[~inlier_mask]
    if not models:
        raise NoModelFound("first RANSAC round found too few inliers")
    return ModelSet(models)


def _ransac_round(sub: MatchSet, rng, thresh: float):
    n = len(sub)
    best_count = 0
    best_mask = None
    trials_needed = RANSAC_MAX_TRIALS
    t = 0
    while t < min(trials_needed, RANSAC_MAX_TRIALS):
        t += 1
        pick = rng.choice(n, size=4, replace=False)
        try:
            h = estimate_homography_dlt(sub.subset(pick))
        except DegenerateConfiguration:
            continue
        errs = ste_residuals(h.m, sub)
        mask = errs < thresh
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            w = count / n
            if w >= 1.0:
                break
            denom = math.log(max(1.0 - w**4, 1e-300))
            trials_needed = max(20, math.ceil(math.log(1 - RANSAC_CONFIDENCE) / denom))
    if best_count < MIN_MODEL_SUPPORT:
        return None
    consensus = sub.subset(best_mask)
    try:
        h0 = estimate_homography_dlt(consensus)
    except DegenerateConfiguration:
        return None
    h = refine_homography_lm(h0, consensus)
    errs = ste_residuals(h.m, sub)
    mask = errs < thresh
    if int(mask.sum()) < MIN_MODEL_SUPPORT:
        return None
    return h, mask


def _argmin_assignment(costs: np.ndarray) -> np.ndarray:
    return np.argmin(costs, axis=0)


@dataclass
class FitDiagnostics:
    outer_iterations: int = 0
    energy_trace: list = None
    monotonicity_violations: int = 0

    def __post_init__(self):
        if self.energy_trace is None:
            self.energy_trace = []


def fit(
    matches: MatchSet,
    graph: NeighborGraph,
    params: EnergyParams,
    seed: int,
    inlier_threshold: float = 3.0,
    max_outer: int = 20,
    rel_tol: float = 1e-6,
    full_output: bool = False,
):
    """PEARL loop: expansion / per-model LM refit / energy-gated pruning.

    Returns (ModelSet, assignment, EnergyBreakdown); with full_output=True a
    FitDiagnostics with the per-iteration energy trace is appended.
    """
    if len(matches) < 4:
        raise DegenerateConfiguration("need >= 4 matches to fit")
    models = list(init_models_iterative_ransac(matches, params, seed, inlier_threshold).models)
    costs = data_cost_matrix(models, matches, params.gamma)
    assign = _argmin_assignment(costs)
    diag = FitDiagnostics()
    edges = graph.edges
    prev_total = _energy_from_costs(costs, assign, edges, params).total
    diag.energy_trace.append(prev_total)

    for outer in range(max_outer):
        assign = expand_labels(ModelSet(models), assign, graph, matches, params, costs)

        # refit each supported model on its assigned matches; drop weak ones
        dropped_any = False
        keep = []
        for l, h in enumerate(models, start=1):
            idx = np.nonzero(assign == l)[0]
            if len(idx) >= MIN_MODEL_SUPPORT:
                refined = refine_homography_lm(h, matches.subset(idx))
                keep.append(refined)
            else:
                dropped_any = True
        if not keep:
            raise NoModelFound("all models lost support during fitting")
        if dropped_any or len(keep) != len(models):
            models, assign, costs = _relabel_after_drop(keep, models, assign, matches, params)
            assign = expand_labels(ModelSet(models), assign, graph, matches, params, costs)
        else:
            models = keep
            costs = data_cost_matrix(models, matches, params.gamma)

        # pruning pass: delete a model outright when that lowers total energy
        cur = _energy_from_costs(costs, assign, edges, params)
        for l in range(len(models), 0, -1):
            if len(models) == 1:
                break
            t_models = models[:l - 1] + models[l:]
            t_costs = np.delete(costs, l, axis=0)
            t_assign = assign.copy()
            t_assign[t_assign == l] = 0
            t_assign[t_assign > l] -= 1
            moved = np.nonzero(assign == l)[0]
            if len(moved):
                t_assign[moved] = np.argmin(t_costs[:, moved], axis=0)
            t_energy = _energy_from_costs(t_costs, t_assign, edges, params)
            if t_energy.total < cur.total:
                models, costs, assign, cur = t_models, t_costs, t_assign, t_energy

        total = cur.total
        diag.outer_iterations = outer + 1
        diag.energy_trace.append(total)
        if total > prev_total + 1e-9 * max(1.0, abs(prev_total)):
            diag.monotonicity_violations += 1
            log.warning("energy increased across outer iteration %d", outer + 1)
        if prev_total - total < rel_tol * max(prev_total, 1e-300):
            prev_total = total
            break
        prev_total = total

    breakdown = _energy_from_costs(costs, assign, edges, params)
    result = (ModelSet(models), assign, breakdown)
    if full_output:
        return result + (diag,)
    return result


def _relabel_after_drop(keep, old_models, assign, matches, params):
    """Rebuild labels after dropping weak models; orphans go to their best label."""
    old_to_new = {0: 0}
    new_models = []
    for l, h in enumerate(old_models, start=1):
        idx = np.nonzero(assign == l)[0]
        if len(idx) >= MIN_MODEL_SUPPORT:
            new_models.append(keep[len(new_models)])
            old_to_new[l] = len(new_models)
    costs = data_cost_matrix(new_models, matches, params.gamma)
    new_assign = np.zeros_like(assign)
    orphans = []
    for i, l in enumerate(assign):
        if l in old_to_new:
            new_assign[i] = old_to_new[l]
        else:
            orphans.append(i)
    if orphans:
        orphans = np.asarray(orphans)
        new_assign[orphans] = np.argmin(costs[:, orphans], axis=0)
    return new_models, new_assign, costs
