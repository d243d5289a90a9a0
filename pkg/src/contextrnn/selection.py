"""Data-driven context-series selection.

Three relevance matrices (Pearson correlation, correlation spanning tree,
histogram mutual information) are min-max normalized and averaged; the top
ceil(1.5·S) candidates per target then go through pairwise Granger F-tests,
and the S lowest p-values win. This keeps the number of Granger tests at
N·ceil(1.5·S) instead of N².

All estimators use pairwise-complete observations and fixed tie rules, so
the whole pipeline is deterministic given the panel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .data import DataError, SeriesPanel

logger = logging.getLogger(__name__)

__all__ = [
    "AdjacencyMatrix",
    "ContextMap",
    "GrangerResult",
    "pearson_matrix",
    "cst_matrix",
    "mi_matrix",
    "aggregate",
    "shortlist",
    "granger_rank",
    "build_context_map",
    "write_context_map",
    "read_context_map",
]

#: ridge jitter added to normal equations when a Granger regression is singular
RIDGE = 1e-8

MIN_PAIR_OBS_CORR = 3
MIN_PAIR_OBS_MI = 32


@dataclass(frozen=True)
class AdjacencyMatrix:
    """n×n relevance weights; ``kind`` records which estimator produced them."""

    n: int
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        if self.weights.shape != (self.n, self.n):
            raise DataError("adjacency matrix shape mismatch")


@dataclass(frozen=True)
class ContextMap:
    """Ranked context ids per target plus the global K-series context batch."""

    per_target: dict[int, tuple[int, ...]]
    global_batch: tuple[int, ...]
    S: int
    K: int

    def __post_init__(self):
        for target, ids in self.per_target.items():
            if len(ids) != self.S or len(set(ids)) != self.S or target in ids:
                raise DataError(f"bad context list for target {target}")
        if len(self.global_batch) != self.K or len(set(self.global_batch)) != self.K:
            raise DataError("global batch must hold K distinct ids")


@dataclass(frozen=True)
class GrangerResult:
    p_values: np.ndarray  # n×n, NaN where untested
    per_target: dict[int, tuple[int, ...]]
    tests_performed: int


def _joint(panel: SeriesPanel, i: int, j: int):
    keep = panel.mask[i] & panel.mask[j]
    return panel.values[i, keep], panel.values[j, keep]


def pearson_matrix(panel: SeriesPanel) -> AdjacencyMatrix:
    """Pairwise-complete Pearson coefficients; zero-variance series score 0."""
    n = panel.n
    weights = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            x, y = _joint(panel, i, j)
            if x.size < MIN_PAIR_OBS_CORR:
                raise DataError(f"series pair ({i}, {j}) has {x.size} joint points, need >= 3")
            xc, yc = x - x.mean(), y - y.mean()
            denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
            r = 0.0 if denom == 0.0 else float(xc @ yc) / denom
            weights[i, j] = weights[j, i] = r
    return AdjacencyMatrix(n, weights, "CM")


def cst_matrix(panel: SeriesPanel) -> AdjacencyMatrix:
    """Minimum spanning tree over distances 1 - |corr| (Kruskal, index tie-break).

    Edge (i, j) of the tree carries weight |corr_ij|; all other entries 0.
    """
    n = panel.n
    if n < 2:
        raise DataError("spanning tree needs at least two series")
    corr = np.abs(pearson_matrix(panel).weights)
    edges = sorted(
        (1.0 - corr[i, j], i, j)
        for i in range(n)
        for j in range(i + 1, n)
    )
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    weights = np.zeros((n, n))
    added = 0
    for dist, i, j in edges:
        ri, rj = find(i), find(j)
        if ri == rj:
            continue
        parent[ri] = rj
        weights[i, j] = weights[j, i] = corr[i, j]
        added += 1
        if added == n - 1:
            break
    return AdjacencyMatrix(n, weights, "CST")


def _bin_count(n_obs: int) -> int:
    return min(64, max(8, int(math.isqrt(n_obs))))


def _mi_pair(x: np.ndarray, y: np.ndarray) -> float:
    bins = _bin_count(x.size)
    joint, _, _ = np.histogram2d(x, y, bins=bins)
    joint /= joint.sum()
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    outer = np.outer(px, py)
    nonzero = joint > 0
    return float(np.sum(joint[nonzero] * np.log(joint[nonzero] / outer[nonzero])))


def mi_matrix(panel: SeriesPanel) -> AdjacencyMatrix:
    """Equal-width-histogram mutual information in nats, pairwise complete.

    Bin count per marginal is max(8, floor(sqrt(T))) capped at 64; constant
    series have zero entropy and score 0 against everything.
    """
    n = panel.n
    weights = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            x, y = _joint(panel, i, j)
            if x.size < MIN_PAIR_OBS_MI:
                raise DataError(f"series pair ({i}, {j}) has {x.size} joint points, need >= {MIN_PAIR_OBS_MI}")
            if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
                mi = 0.0
            else:
                mi = max(0.0, _mi_pair(x, y))
            weights[i, j] = weights[j, i] = mi
    return AdjacencyMatrix(n, weights, "MI")


def _minmax_offdiag(weights: np.ndarray) -> np.ndarray:
    n = weights.shape[0]
    off = ~np.eye(n, dtype=bool)
    lo, hi = weights[off].min(), weights[off].max()
    out = np.zeros_like(weights)
    if hi > lo:
        out[off] = (weights[off] - lo) / (hi - lo)
    # constant matrix contributes 0 uniformly
    return out


def aggregate(matrices) -> AdjacencyMatrix:
    """Min-max scale each matrix over off-diagonal entries, then average.

    Correlation must be passed as |CM| so every input is a non-negative
    relevance score.
    """
    if not matrices:
        raise DataError("nothing to aggregate")
    n = matrices[0].n
    for m in matrices:
        if m.n != n:
            raise DataError("aggregation inputs differ in size")
        if np.any(m.weights < 0.0):
            raise DataError(f"{m.kind} has negative entries; pass absolute relevance scores")
    stacked = np.stack([_minmax_offdiag(m.weights) for m in matrices])
    return AdjacencyMatrix(n, stacked.mean(axis=0), "aggregated")


def shortlist(aggregated: AdjacencyMatrix, S: int) -> dict[int, tuple[int, ...]]:
    """Top ceil(1.5·S) candidate ids per target, by weight then ascending id."""
    n = aggregated.n
    want = math.ceil(1.5 * S)
    if want > n - 1:
        raise DataError(f"need {want} candidates per target but only {n - 1} other series exist")
    out = {}
    for target in range(n):
        others = [j for j in range(n) if j != target]
        others.sort(key=lambda j: (-aggregated.weights[target, j], j))
        out[target] = tuple(others[:want])
    return out


def _lag_design(y: np.ndarray, x: np.ndarray | None, maxlag: int):
    """Regression rows for y_t on own lags (and optionally x lags), intercept first."""
    T = y.size
    rows = T - maxlag
    cols = 1 + maxlag + (maxlag if x is not None else 0)
    design = np.empty((rows, cols))
    design[:, 0] = 1.0
    for lag in range(1, maxlag + 1):
        design[:, lag] = y[maxlag - lag : T - lag]
        if x is not None:
            design[:, maxlag + lag] = x[maxlag - lag : T - lag]
    return design, y[maxlag:]


def _rss(design: np.ndarray, target: np.ndarray) -> float:
    gram = design.T @ design
    rhs = design.T @ target
    try:
        coef = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        # collinear lags: jitter scaled to the gram's magnitude keeps it solvable
        jitter = RIDGE * max(1.0, float(np.trace(gram)) / gram.shape[0])
        logger.warning("singular Granger regression; applying ridge jitter %.3g", jitter)
        coef = np.linalg.solve(gram + jitter * np.eye(gram.shape[0]), rhs)
    resid = target - design @ coef
    return float(resid @ resid)


def _longest_joint_run(panel: SeriesPanel, i: int, j: int):
    both = panel.mask[i] & panel.mask[j]
    best_lo = best_hi = lo = 0
    t = 0
    while t < both.size:
        if both[t]:
            lo = t
            while t < both.size and both[t]:
                t += 1
            if t - lo > best_hi - best_lo:
                best_lo, best_hi = lo, t
        else:
            t += 1
    return best_lo, best_hi


def granger_pvalue(y: np.ndarray, x: np.ndarray, maxlag: int) -> float:
    """F-test p-value: do x's lags improve y's autoregression?"""
    design_r, target = _lag_design(y, None, maxlag)
    design_a, _ = _lag_design(y, x, maxlag)
    rss_r = _rss(design_r, target)
    rss_a = _rss(design_a, target)
    dof = target.size - 2 * maxlag - 1
    if dof <= 0:
        raise DataError(f"too few observations for maxlag={maxlag}")
    if rss_a <= 0.0:
        return 0.0 if rss_r > rss_a else 1.0
    f_stat = ((rss_r - rss_a) / maxlag) / (rss_a / dof)
    if f_stat <= 0.0:
        return 1.0
    # survival function of F(maxlag, dof) via the regularized incomplete beta
    return float(special.betainc(dof / 2.0, maxlag / 2.0, dof / (dof + maxlag * f_stat)))


def granger_rank(
    panel: SeriesPanel,
    candidates: dict[int, tuple[int, ...]],
    maxlag: int,
    S: int,
    aggregated: AdjacencyMatrix | None = None,
) -> GrangerResult:
    """Per target, F-test each shortlisted candidate and keep the S best.

    Ranking is by ascending p-value, ties broken by descending aggregated
    weight then ascending id. Only shortlisted pairs are tested.
    """
    n = panel.n
    p_values = np.full((n, n), np.nan)
    per_target = {}
    tests = 0
    for target, cand_ids in candidates.items():
        scored = []
        for cand in cand_ids:
            lo, hi = _longest_joint_run(panel, target, cand)
            run = hi - lo
            if run <= 10 * maxlag:
                raise DataError(
                    f"pair ({target}, {cand}): joint run {run} too short for maxlag={maxlag}"
                )
            p = granger_pvalue(panel.values[target, lo:hi], panel.values[cand, lo:hi], maxlag)
            tests += 1
            p_values[target, cand] = p
            weight = aggregated.weights[target, cand] if aggregated is not None else 0.0
            scored.append((p, -weight, cand))
        scored.sort()
        per_target[target] = tuple(c for _, _, c in scored[:S])
    return GrangerResult(p_values, per_target, tests)


def build_context_map(
    panel: SeriesPanel,
    S: int,
    K: int,
    mode: str = "data_driven",
    predefined_path=None,
    maxlag: int = 4,
) -> ContextMap:
    """Full selection pipeline, or a verbatim predefined map.

    Data-driven: |CM|, CST and MI are aggregated, shortlisted to
    ceil(1.5·S) per target, Granger-ranked down to S. The global batch is
    the K series picked most often across targets (ties by total
    aggregated weight, then id).
    """
    if mode == "predefined":
        if predefined_path is None:
            raise DataError("predefined mode needs a map file")
        cm = read_context_map(predefined_path)
        bad = [i for ids in cm.per_target.values() for i in ids if not 0 <= i < panel.n]
        bad += [i for i in cm.global_batch if not 0 <= i < panel.n]
        if bad:
            raise DataError(f"predefined map references unknown series ids {sorted(set(bad))}")
        return cm
    if mode != "data_driven":
        raise DataError(f"unknown context selection mode {mode!r}")
    if K > panel.n:
        raise DataError("context batch cannot exceed the series count")

    corr = pearson_matrix(panel)
    abs_corr = AdjacencyMatrix(corr.n, np.abs(corr.weights), "CM")
    agg = aggregate([abs_corr, cst_matrix(panel), mi_matrix(panel)])
    candidates = shortlist(agg, S)
    granger = granger_rank(panel, candidates, maxlag, S, agg)

    counts = np.zeros(panel.n)
    for ids in granger.per_target.values():
        for i in ids:
            counts[i] += 1
    totals = agg.weights.sum(axis=0)
    order = sorted(range(panel.n), key=lambda i: (-counts[i], -totals[i], i))
    return ContextMap(granger.per_target, tuple(order[:K]), S, K)


def write_context_map(cm: ContextMap, path):
    """Text format: one `target: ctx,...` line per target, then a GLOBAL line."""
    def dump(fh):
        for target in sorted(cm.per_target):
            fh.write(f"{target}: {','.join(str(i) for i in cm.per_target[target])}\n")
        fh.write(f"GLOBAL: {','.join(str(i) for i in cm.global_batch)}\n")

    if hasattr(path, "write"):
        dump(path)
    else:
        with open(path, "w") as fh:
            dump(fh)


def read_context_map(path) -> ContextMap:
    if hasattr(path, "read"):
        lines = path.read().splitlines()
    else:
        with open(path) as fh:
            lines = fh.read().splitlines()
    per_target = {}
    global_batch = None
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head, _, tail = line.partition(":")
        ids = tuple(int(tok) for tok in tail.split(",") if tok.strip())
        if head.strip() == "GLOBAL":
            global_batch = ids
        else:
            per_target[int(head)] = ids
    if global_batch is None:
        raise DataError("context map file is missing the GLOBAL line")
    if not per_target:
        raise DataError("context map file has no per-target lines")
    sizes = {len(ids) for ids in per_target.values()}
    if len(sizes) != 1:
        raise DataError("per-target context lists differ in length")
    return ContextMap(per_target, global_batch, sizes.pop(), len(global_batch))
