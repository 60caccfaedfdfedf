"""Marginal outlier detection in the discrete and continuous score spaces.

Discrete stage: cluster the distinct discrete scores with optimal 1-D
k-means for every K, pick K* where the size of the cluster holding the
smallest score is most stable, then peel off rows above a scaled-score gap
and rows with an infrequent single level.

Continuous stage: look for unusually large gaps between consecutive sorted
forest scores (a Chebyshev-style rule) and flag everything above the lowest
large gap that sits above 0.4.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator

import numba
import numpy as np

from .data import DetectionConfig, ScoreProfile

log = logging.getLogger(__name__)

SCORE_FLOOR = 0.4
LAMBDAS = np.arange(2, 21)


# ---------------------------------------------------------------- 1-D k-means


@numba.njit(cache=True)
def _sse(c1, c2, i, j):
    # within-cluster sum of squares of x[i..j] (inclusive) from prefix sums
    m = j - i + 1
    s = c1[j + 1] - c1[i]
    v = c2[j + 1] - c2[i] - s * s / m
    return v if v > 0.0 else 0.0


@numba.njit(cache=True)
def _kmeans_tables(x, kmax):
    """cost[k, i]: optimal SSE of x[0..i] in k+1 clusters; start[k, i]: first index of the last cluster."""
    m = x.shape[0]
    shift = x - x.mean()
    c1 = np.zeros(m + 1)
    c2 = np.zeros(m + 1)
    for i in range(m):
        c1[i + 1] = c1[i] + shift[i]
        c2[i + 1] = c2[i] + shift[i] * shift[i]
    cost = np.full((kmax, m), np.inf)
    start = np.zeros((kmax, m), dtype=np.int32)
    for i in range(m):
        cost[0, i] = _sse(c1, c2, 0, i)
    stack = np.empty((4 * m + 16, 4), dtype=np.int64)
    for k in range(1, kmax):
        # divide and conquer over i: the optimal start is monotone in i
        top = 0
        stack[top, 0] = k
        stack[top, 1] = m - 1
        stack[top, 2] = k
        stack[top, 3] = m - 1
        top += 1
        while top > 0:
            top -= 1
            ilo = stack[top, 0]
            ihi = stack[top, 1]
            jlo = stack[top, 2]
            jhi = stack[top, 3]
            if ilo > ihi:
                continue
            mid = (ilo + ihi) // 2
            best = np.inf
            arg = jlo
            hi = jhi if jhi < mid else mid
            for j in range(jlo, hi + 1):
                v = cost[k - 1, j - 1] + _sse(c1, c2, j, mid)
                if v < best:
                    best = v
                    arg = j
            cost[k, mid] = best
            start[k, mid] = arg
            stack[top, 0] = ilo
            stack[top, 1] = mid - 1
            stack[top, 2] = jlo
            stack[top, 3] = arg
            top += 1
            stack[top, 0] = mid + 1
            stack[top, 1] = ihi
            stack[top, 2] = arg
            stack[top, 3] = jhi
            top += 1
    return cost, start


def _labels_from(start: np.ndarray, m: int, K: int) -> np.ndarray:
    labels = np.empty(m, dtype=np.int64)
    hi = m - 1
    for k in range(K - 1, -1, -1):
        lo = int(start[k, hi]) if k > 0 else 0
        labels[lo : hi + 1] = k
        hi = lo - 1
    return labels


def kmeans_1d(values, K: int) -> np.ndarray:
    """Globally optimal 1-D k-means on sorted distinct values.

    Returns:
        Cluster label per value; clusters are contiguous and numbered from
        the smallest values upward.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("values must be a non-empty 1-D array")
    if np.any(np.diff(x) <= 0):
        raise ValueError("values must be sorted and distinct")
    if not 1 <= K <= x.size:
        raise ValueError(f"K={K} must lie in [1, {x.size}]")
    _, start = _kmeans_tables(x, K)
    return _labels_from(start, x.size, K)


def zero_cluster_sizes(values) -> np.ndarray:
    """Size of the cluster holding the smallest value, for K = 1..len(values)."""
    x = np.asarray(values, dtype=float)
    m = x.size
    _, start = _kmeans_tables(x, m)
    out = np.empty(m, dtype=np.int64)
    for K in range(1, m + 1):
        hi = m - 1
        lo = 0
        for k in range(K - 1, 0, -1):
            lo = int(start[k, hi])
            hi = lo - 1
        out[K - 1] = hi + 1 if K > 1 else m
    return out


def mode_by_longest_run(seq) -> int:
    """Most frequent value; ties go to the value with the longest consecutive
    run, then to the run that ends at the larger position."""
    seq = [int(v) for v in seq]
    freq: dict[int, int] = {}
    for v in seq:
        freq[v] = freq.get(v, 0) + 1
    top = max(freq.values())
    best_key, best_value = None, None
    i = 0
    while i < len(seq):
        j = i
        while j + 1 < len(seq) and seq[j + 1] == seq[i]:
            j += 1
        v = seq[i]
        if freq[v] == top:
            key = (j - i + 1, j)
            if best_key is None or key >= best_key:
                best_key, best_value = key, v
        i = j + 1
    return int(best_value)


def stable_part(sizes) -> np.ndarray:
    """Drop the trailing run where the zero score sits alone.

    Once K is large enough to split zero from the next score, the zero
    cluster stays a singleton up to K = |E|, so the length of that run says
    nothing about stability. It only counts when nothing else is left.
    """
    sizes = np.asarray(sizes)
    end = sizes.size
    while end > 0 and sizes[end - 1] == 1:
        end -= 1
    return sizes[:end] if end > 0 else sizes


# ---------------------------------------------------------------- discrete stage


@dataclass(frozen=True)
class ScoreStats:
    m_d: float
    s_d_se: float
    unique_scores: np.ndarray
    m_c: float = float("nan")
    s_c_se: float = float("nan")


@dataclass
class DiscreteTrace:
    """Everything the discrete stage decided, for diagnostics."""

    zero_cluster_sizes: list[int] = field(default_factory=list)
    mode: int | None = None
    k_star: int | None = None
    k_final: int | None = None
    gap_threshold: float | None = None
    removed_by_gap: int = 0
    removed_by_unit: int = 0
    unit_rule: bool = True


class DiscreteMarginal:
    """Candidate discrete-outlier sets for K = K*, K*-1, ..., 1.

    Iterating yields ``(K, rows)`` only for the K values whose flagged set
    stays within the budget. The final fallback (every K exhausted) is the
    empty set and is not yielded.
    """

    def __init__(self, scores, unit_infrequent, cfg: DetectionConfig, use_unit_rule: bool = True):
        s = np.asarray(scores, dtype=float)
        self.scores = s
        self.unit = np.asarray(unit_infrequent, dtype=bool)
        if not use_unit_rule:
            self.unit = np.zeros_like(self.unit)
        self.n = s.size
        self.budget = cfg.flag_budget(self.n)
        self.trace = DiscreteTrace(unit_rule=use_unit_rule)
        uniq = np.unique(s)
        self.unique = uniq
        m_d = float(s.mean())
        sd = float(s.std(ddof=1)) if s.size > 1 else 0.0
        self.stats = ScoreStats(m_d, sd, uniq)
        self._extra = self._removals()
        if uniq.size >= 2:
            sizes = zero_cluster_sizes(uniq)
            self.sizes = sizes
            mode = mode_by_longest_run(stable_part(sizes))
            self.trace.zero_cluster_sizes = sizes.tolist()
            self.trace.mode = mode
            self.trace.k_star = int(np.flatnonzero(sizes == mode)[0]) + 1
        else:
            self.sizes = np.array([1])

    def _removals(self) -> np.ndarray:
        """Rows removed from the zero cluster regardless of K."""
        s, st = self.scores, self.stats
        out = self.unit.copy()
        self.trace.removed_by_unit = int(out.sum())
        if st.s_d_se > 0 and st.unique_scores.size >= 2:
            scaled = np.sort(np.abs(st.unique_scores - st.m_d) / st.s_d_se)
            jumps = np.flatnonzero(np.diff(scaled) > 1.0)
            if jumps.size:
                t = float(scaled[jumps[0]])
                self.trace.gap_threshold = t
                gap = (np.abs(s - st.m_d) / st.s_d_se > t) & (s > st.m_d)
                self.trace.removed_by_gap = int((gap & ~out).sum())
                out |= gap
        return out

    def flagged_at(self, K: int) -> np.ndarray:
        """Rows outside the zero cluster at K, after the fixed removals."""
        if self.unique.size < 2:
            return np.flatnonzero(self._extra)
        size = int(self.sizes[K - 1])
        cutoff = self.unique[size - 1]
        return np.flatnonzero((self.scores > cutoff) | self._extra)

    def __iter__(self) -> Iterator[tuple[int, np.ndarray]]:
        if self.unique.size < 2:
            if self.unique.size == 1 and self.unique[0] == 0.0:
                return
            rows = self.flagged_at(1)
            if rows.size < self.budget:
                yield 1, rows
            return
        for K in range(self.trace.k_star, 0, -1):
            rows = self.flagged_at(K)
            if rows.size < self.budget:
                yield K, rows


def detect_discrete_marginal(profile: ScoreProfile, model=None, cfg: DetectionConfig = DetectionConfig()) -> np.ndarray:
    """Rows flagged as marginal outliers in the discrete space (stand-alone stage)."""
    stage = DiscreteMarginal(profile.discrete_scores, profile.unit_infrequent, cfg)
    for K, rows in stage:
        stage.trace.k_final = K
        return rows
    return np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------- continuous stage


@dataclass
class ContinuousTrace:
    gap_counts: list[int] = field(default_factory=list)
    lambda_star: int | None = None
    gaps: list[tuple[float, float]] = field(default_factory=list)
    threshold: float | None = None
    m_c: float | None = None
    s_c_se: float | None = None


class ContinuousMarginal:
    """Large gaps among the sorted continuous scores of the rows left over."""

    def __init__(self, scores, excluded, cfg: DetectionConfig):
        s = np.asarray(scores, dtype=float)
        self.n = s.size
        keep = np.ones(self.n, dtype=bool)
        keep[np.asarray(excluded, dtype=np.int64)] = False
        self.rows = np.flatnonzero(keep)
        self.trace = ContinuousTrace()
        self.cuts: list[float] = []
        if self.rows.size < 3:
            return
        vals = s[self.rows]
        srt = np.sort(vals, kind="stable")
        z = np.diff(srt)
        m_c = float(z.mean())
        sd = float(z.std(ddof=1)) if z.size > 1 else 0.0
        self.trace.m_c, self.trace.s_c_se = m_c, sd
        self.values = vals
        if sd <= 0.0:
            return
        dev = np.abs(z - m_c) / sd
        counts = np.array([(dev >= lam).sum() for lam in LAMBDAS])
        self.trace.gap_counts = counts.tolist()
        mode = mode_by_longest_run(counts)
        if mode == 0:
            return
        lam = int(LAMBDAS[np.flatnonzero(counts == mode)[-1]])
        self.trace.lambda_star = lam
        big = np.flatnonzero((dev >= lam) & (z > m_c))
        self.trace.gaps = [(float(srt[i]), float(srt[i + 1])) for i in big]
        self.cuts = [float(srt[i]) for i in big if srt[i] > SCORE_FLOOR]

    def flagged(self, level: int = 0) -> np.ndarray:
        """Rows above the ``level``-th admissible gap (0 = lowest)."""
        if level >= len(self.cuts):
            return np.zeros(0, dtype=np.int64)
        t = self.cuts[level]
        return self.rows[self.values > t]


def detect_continuous_marginal(profile: ScoreProfile, flagged_discrete, cfg: DetectionConfig = DetectionConfig()) -> np.ndarray:
    """Rows flagged in the continuous space, ignoring the discrete feedback loop."""
    stage = ContinuousMarginal(profile.continuous_scores, flagged_discrete, cfg)
    return stage.flagged(0)


# ---------------------------------------------------------------- both stages


@dataclass
class MarginalOutcome:
    discrete: np.ndarray
    continuous: np.ndarray
    discrete_trace: DiscreteTrace | None
    continuous_trace: ContinuousTrace | None
    notes: list[str] = field(default_factory=list)


def detect_marginal(
    discrete_scores,
    unit_infrequent,
    continuous_scores,
    cfg: DetectionConfig,
) -> MarginalOutcome:
    """Run the discrete stage, then the continuous stage with feedback.

    Either score vector may be ``None`` when the table lacks that column type.
    If the continuous stage overflows the budget the discrete stage retries
    with a smaller K; once that is exhausted, higher continuous gaps are
    tried before giving up on the continuous flags.
    """
    n = len(discrete_scores) if discrete_scores is not None else len(continuous_scores)
    budget = cfg.flag_budget(n)
    empty = np.zeros(0, dtype=np.int64)
    notes: list[str] = []
    if discrete_scores is not None:
        dstage = DiscreteMarginal(discrete_scores, unit_infrequent, cfg)
        candidates = list(dstage)
        if not candidates and dstage.trace.removed_by_unit >= budget:
            # ordinary levels sit just under their threshold: the single-level
            # rule alone overflows the budget, so rely on the scores instead
            dstage = DiscreteMarginal(discrete_scores, unit_infrequent, cfg, use_unit_rule=False)
            candidates = list(dstage)
            notes.append("single-level rule dropped: it alone exceeded the flag budget")
        dtrace = dstage.trace
    else:
        candidates, dtrace = [], None
    candidates.append((0, empty))
    if continuous_scores is None:
        K, rows = candidates[0]
        if dtrace is not None:
            dtrace.k_final = K or None
        return MarginalOutcome(rows, empty, dtrace, None, ["no continuous columns"])

    cstage = None
    for K, drows in candidates:
        cstage = ContinuousMarginal(continuous_scores, drows, cfg)
        crows = cstage.flagged(0)
        if drows.size + crows.size < budget:
            if dtrace is not None:
                dtrace.k_final = K or None
            if cstage.cuts:
                cstage.trace.threshold = cstage.cuts[0]
            return MarginalOutcome(drows, crows, dtrace, cstage.trace, notes)
    # no discrete flags left: climb to higher continuous gaps
    assert cstage is not None
    if dtrace is not None:
        dtrace.k_final = None
    for level in range(1, len(cstage.cuts)):
        crows = cstage.flagged(level)
        if crows.size < budget:
            cstage.trace.threshold = cstage.cuts[level]
            notes.append(f"continuous threshold moved to gap {level}")
            return MarginalOutcome(empty, crows, dtrace, cstage.trace, notes)
    notes.append("flag budget exhausted: no marginal outliers reported")
    return MarginalOutcome(empty, empty, dtrace, cstage.trace, notes)
