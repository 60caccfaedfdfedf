"""Which continuous columns does a discrete column depend on?

A continuous column is a candidate when a Kruskal-Wallis test finds the
discrete levels at different rank positions. A set of candidates is accepted
when, for every level, the nearest neighbours of that level's most central
point are dominated by the level itself (a chi-square goodness-of-fit test
against the overall level proportions, all levels rejecting under Holm).
Among accepted sets the one with the smallest sum of log p-values wins.

In more than one dimension the distances are weighted Minkowski distances
in each level's robust principal axes, scaled by the inverse eigenvalues.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.stats import chi2, norm

from .stattests import chi_square_gof, holm_all_reject, kruskal_wallis

log = logging.getLogger(__name__)

TRIM_FRACTION = 0.75
REWEIGHT_QUANTILE = 0.975
EIGEN_FLOOR = 1e-9
_MAD_SCALE = 1.4826


@dataclass(frozen=True)
class ContextConfig:
    delta: float = 0.5
    alpha1: float = 0.01
    alpha2: float = 0.01
    minkowski_order: float = 2.0
    # product or quotient structure leaves every column's level means equal,
    # so the rank screen can miss it; then every column becomes a candidate
    screen_fallback: bool = True
    # where a level only counts as separated when its own rows are
    # over-represented around its core: "single" (one-column contexts),
    # "all" or "none"
    directional: str = "single"

    def __post_init__(self) -> None:
        if not 0.0 < self.delta <= 0.5:
            raise ValueError("delta must lie in (0, 0.5]")
        for name in ("alpha1", "alpha2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.minkowski_order <= 0:
            raise ValueError("minkowski_order must be positive")
        if self.directional not in ("single", "all", "none"):
            raise ValueError("directional must be 'single', 'all' or 'none'")

    def directional_for(self, dim: int) -> bool:
        return self.directional == "all" or (self.directional == "single" and dim == 1)


@dataclass(frozen=True)
class SubsetTest:
    columns: tuple[int, ...]
    log_p: tuple[float, ...]
    rejected: bool

    @property
    def log_p_sum(self) -> float:
        return float(sum(self.log_p))


@dataclass
class ContextTrace:
    kw_log_p: list[float] = field(default_factory=list)
    candidates: list[int] = field(default_factory=list)
    screen_fallback: bool = False
    trail: list[SubsetTest] = field(default_factory=list)
    note: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "kw_log_p": self.kw_log_p,
            "candidates": self.candidates,
            "screen_fallback": self.screen_fallback,
            "note": self.note,
            "trail": [
                {"columns": list(t.columns), "log_p": list(t.log_p), "log_p_sum": t.log_p_sum, "rejected": t.rejected}
                for t in self.trail
            ],
        }


@dataclass(frozen=True)
class AssociationFinding:
    discrete_column: int
    context: tuple[int, ...]
    log_p_sum: float
    per_level_log_p: tuple[float, ...]

    @property
    def per_level_p(self) -> tuple[float, ...]:
        return tuple(math.exp(v) for v in self.per_level_log_p)


# ---------------------------------------------------------------- pieces


def core_point(dist) -> int:
    """Row minimizing the median of its distances; ties go to the lowest index."""
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] == 0:
        raise ValueError("need a non-empty square distance matrix")
    return int(np.argmin(np.median(d, axis=1)))


def _robust_scale(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = np.median(x, axis=0)
    scale = _MAD_SCALE * np.median(np.abs(x - center), axis=0)
    sd = x.std(axis=0)
    scale = np.where(scale > 0, scale, sd)
    return center, np.where(scale > 0, scale, 1.0)


def robust_eigenweights(points) -> tuple[np.ndarray, np.ndarray]:
    """Loadings and eigenvalues (descending) of a trimmed, reweighted PCA.

    Keeps the 75% of points with the smallest Chebyshev distance after
    median/MAD standardization (covariance rescaled for the trim), then
    runs one reweighting step: points
    within the 0.975 chi-square quantile of the trimmed fit's Mahalanobis
    distance are kept and their covariance is scaled to be consistent at
    the normal. Eigenvalues are floored at ``1e-9`` times the largest.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2:
        raise ValueError("points must be a 2-D array")
    m, dim = x.shape
    if m < dim + 2:
        raise ValueError(f"need at least {dim + 2} points for {dim} dimensions")
    center, scale = _robust_scale(x)
    cheb = np.max(np.abs(x - center) / scale, axis=1)
    keep = max(dim + 1, int(math.ceil(TRIM_FRACTION * m)))
    core = x[np.argsort(cheb, kind="stable")[:keep]]
    vals, vecs = _floored_eigh(_box_consistency(dim) * np.atleast_2d(np.cov(core, rowvar=False)))

    cut = chi2.ppf(REWEIGHT_QUANTILE, dim)
    z = (x - core.mean(axis=0)) @ vecs
    d2 = (z**2 / vals).sum(axis=1)
    kept = x[d2 <= cut]
    if kept.shape[0] >= dim + 1:
        factor = REWEIGHT_QUANTILE / chi2.cdf(cut, dim + 2)
        vals, vecs = _floored_eigh(factor * np.atleast_2d(np.cov(kept, rowvar=False)))
    # fix the sign of each axis so results do not depend on the solver
    signs = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(dim)])
    return vecs * np.where(signs == 0, 1.0, signs), vals


def _box_consistency(dim: int) -> float:
    """Inverse variance of a standard normal coordinate kept by the box trim."""
    keep = TRIM_FRACTION ** (1.0 / dim)
    a = norm.ppf((1.0 + keep) / 2.0)
    return 1.0 / (1.0 - 2.0 * a * norm.pdf(a) / keep)


def _floored_eigh(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    top = vals[0] if vals[0] > 0 else 1.0
    return np.maximum(vals, EIGEN_FLOOR * top), vecs


def weighted_minkowski(a: np.ndarray, b: np.ndarray, weights: np.ndarray, r: float) -> np.ndarray:
    """Pairwise ``(sum_k w_k |a_k - b_k|^r)^(1/r)`` between the rows of ``a`` and ``b``."""
    acc = np.zeros((a.shape[0], b.shape[0]))
    for k in range(a.shape[1]):
        acc += weights[k] * np.abs(a[:, k, None] - b[None, :, k]) ** r
    return acc ** (1.0 / r)


def _level_probs(codes: np.ndarray, levels: np.ndarray) -> np.ndarray:
    return np.array([(codes == l).mean() for l in levels])


def neighbourhood_tests(X, codes, levels, cfg: ContextConfig, whiten: bool) -> tuple[float, ...]:
    """Log p-value per level for the composition of its core point's neighbourhood.

    ``X`` holds the candidate columns of the rows left after removing
    marginal outliers. The core point itself is not counted as its own
    neighbour. Under the directional rule a level whose own count does not
    exceed its expectation gets log p = 0.
    """
    n = X.shape[0]
    directional = cfg.directional_for(X.shape[1])
    pi = _level_probs(codes, levels)
    out = []
    for i, l in enumerate(levels):
        members = np.flatnonzero(codes == l)
        pts = X[members]
        if whiten:
            vecs, vals = robust_eigenweights(pts)
            proj_all = X @ vecs
            weights = 1.0 / vals
        else:
            proj_all = X
            weights = np.ones(X.shape[1])
        proj = proj_all[members]
        within = weighted_minkowski(proj, proj, weights, cfg.minkowski_order)
        c = members[core_point(within)]
        d = weighted_minkowski(proj_all[c : c + 1], proj_all, weights, cfg.minkowski_order)[0]
        d[c] = np.inf
        k = int(math.ceil(cfg.delta * members.size))
        k = min(k, n - 1)
        nearest = np.argpartition(d, k - 1)[:k] if k < n else np.arange(n)
        counts = np.array([(codes[nearest] == v).sum() for v in levels])
        if directional and counts[i] <= pi[i] * counts.sum():
            out.append(0.0)
        else:
            out.append(chi_square_gof(counts, pi).log_p)
    return tuple(out)


# ---------------------------------------------------------------- search


class ContextSearch:
    """Context identification for one discrete column."""

    def __init__(self, X, codes, cfg: ContextConfig = ContextConfig()):
        self.X = np.asarray(X, dtype=float)
        self.codes = np.asarray(codes)
        self.cfg = cfg
        self.levels = np.unique(self.codes)
        self.trace = ContextTrace()
        self._cache: dict[tuple[int, ...], SubsetTest] = {}
        self.smallest_level = min((int((self.codes == l).sum()) for l in self.levels), default=0)

    def test(self, cols: tuple[int, ...]) -> SubsetTest:
        if cols not in self._cache:
            if len(cols) > 1 and self.smallest_level < len(cols) + 2:
                # too few rows in some level for its principal axes
                return SubsetTest(cols, (), False)
            lp = neighbourhood_tests(self.X[:, list(cols)], self.codes, self.levels, self.cfg, whiten=len(cols) > 1)
            res = SubsetTest(cols, lp, holm_all_reject(lp, self.cfg.alpha2))
            self._cache[cols] = res
            self.trace.trail.append(res)
        return self._cache[cols]

    def screen(self) -> list[int]:
        groups_by_col = []
        for k in range(self.X.shape[1]):
            groups = [self.X[self.codes == l, k] for l in self.levels]
            groups_by_col.append(kruskal_wallis(groups).log_p)
        self.trace.kw_log_p = groups_by_col
        cand = [k for k, lp in enumerate(groups_by_col) if lp <= math.log(self.cfg.alpha1)]
        self.trace.candidates = cand
        return cand

    def one_dimensional(self, cand) -> list[SubsetTest]:
        return [t for t in (self.test((k,)) for k in cand) if t.rejected]

    def backward(self, cand) -> list[SubsetTest]:
        """Drop one column at a time while some subset of the current best passes."""
        best: list[SubsetTest] = []
        base = tuple(cand)
        xi = len(base)
        while xi >= 2:
            passing = [t for t in (self.test(q) for q in itertools.combinations(base, xi)) if t.rejected]
            if not passing:
                break
            top = min(passing, key=lambda t: t.log_p_sum)
            best.append(top)
            base = top.columns
            xi -= 1
        return best

    def forward(self, cand) -> list[SubsetTest]:
        """Start from the best passing pair and add one column at a time."""
        best: list[SubsetTest] = []
        passing = [t for t in (self.test(q) for q in itertools.combinations(cand, 2)) if t.rejected]
        while passing:
            top = min(passing, key=lambda t: t.log_p_sum)
            best.append(top)
            rest = [k for k in cand if k not in top.columns]
            passing = [t for t in (self.test(tuple(sorted(top.columns + (k,)))) for k in rest) if t.rejected]
        return best

    def run(self) -> SubsetTest | None:
        if self.levels.size < 2:
            self.trace.note = "fewer than two levels"
            return None
        sizes = np.array([(self.codes == l).sum() for l in self.levels])
        if sizes.min() < 2:
            self.trace.note = "a level has fewer than two rows"
            return None
        cand = self.screen()
        found = self._search(cand)
        if found is None and self.cfg.screen_fallback:
            everything = list(range(self.X.shape[1]))
            if everything != cand:
                self.trace.screen_fallback = True
                found = self._search(everything)
        return found

    def _search(self, cand) -> SubsetTest | None:
        if not cand:
            return None
        pool = self.one_dimensional(cand)
        if len(cand) >= 2:
            hd = self.backward(cand)
            if not hd:
                hd = self.forward(cand)
            pool += hd
        if not pool:
            return None
        return min(pool, key=lambda t: (t.log_p_sum, len(t.columns)))


def identify_context(X, codes, j: int, cfg: ContextConfig = ContextConfig()) -> tuple[AssociationFinding | None, ContextTrace]:
    """Context of discrete column ``j`` from the non-marginal rows ``X`` / ``codes``."""
    search = ContextSearch(X, codes, cfg)
    best = search.run()
    if best is None:
        return None, search.trace
    return AssociationFinding(j, best.columns, best.log_p_sum, best.log_p), search.trace


def identify_context_1d(X, codes, j: int, cfg: ContextConfig = ContextConfig()) -> AssociationFinding | None:
    """Single-column contexts only: screen, then keep the best passing column."""
    search = ContextSearch(X, codes, cfg)
    passing = search.one_dimensional(search.screen())
    if not passing:
        return None
    top = min(passing, key=lambda t: t.log_p_sum)
    return AssociationFinding(j, top.columns, top.log_p_sum, top.log_p)


def identify_context_hd(X, codes, j: int, candidates, cfg: ContextConfig = ContextConfig()) -> AssociationFinding | None:
    """Backward elimination from ``candidates``; forward selection from pairs if the full set fails."""
    cand = tuple(sorted(candidates))
    if len(cand) < 2:
        raise ValueError("need at least two candidate columns")
    search = ContextSearch(X, codes, cfg)
    recorded = search.backward(cand) or search.forward(cand)
    if not recorded:
        return None
    top = min(recorded, key=lambda t: (t.log_p_sum, len(t.columns)))
    return AssociationFinding(j, top.columns, top.log_p_sum, top.log_p)
