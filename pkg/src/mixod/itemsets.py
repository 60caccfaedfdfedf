"""Discrete outlyingness scores from infrequent itemsets.

An itemset is a set of (discrete column, level) pairs. It is infrequent when
its support falls below a threshold ``sigma`` that depends only on the
variable set it spans. A row's score sums ``1 / (supp * |d|**2)`` over the
qualifying infrequent itemsets it contains; the per-column contribution uses
``|d|**3`` and spreads the same amount over the ``|d|`` columns, so each
contribution row sums to the score.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Sequence

import numpy as np

from .data import DetectionConfig, MixedDataset, MixodError, Schema
from .discretize import quantile_discretize
from .multinomial import ThresholdError, uniform_lower_count

log = logging.getLogger(__name__)

U_REPS = 50
U_CORRELATION = 0.35


class DegenerateDataError(MixodError):
    """A single discrete column already has a threshold below 2."""


class UndefinedAssociationError(ValueError):
    """Theil's U is undefined for a constant column."""


class BoundsInapplicableError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Itemset:
    variables: tuple[int, ...]
    levels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.variables) != len(self.levels) or not self.variables:
            raise ValueError("variables and levels must be non-empty and of equal length")
        if any(a >= b for a, b in zip(self.variables, self.variables[1:])):
            raise ValueError("variables must be strictly increasing")

    def __len__(self) -> int:
        return len(self.variables)


# ---------------------------------------------------------------- thresholds


@lru_cache(maxsize=4096)
def _threshold_cached(n: int, categories: int, alpha: float) -> float:
    return uniform_lower_count(n, categories, alpha)


def support_threshold(level_counts: Sequence[int], n: int, alpha_ci: float) -> float:
    """Support below which an itemset over columns with ``level_counts`` is infrequent."""
    if any(int(l) < 1 for l in level_counts):
        raise ValueError("level counts must be positive")
    if n < 1 or not 0.0 < alpha_ci < 1.0:
        raise ValueError("need n >= 1 and 0 < alpha_ci < 1")
    return _threshold_cached(int(n), math.prod(int(l) for l in level_counts), float(alpha_ci))


def _safe_threshold(categories: int, n: int, alpha: float) -> float:
    try:
        return _threshold_cached(n, categories, alpha)
    except ThresholdError:
        return 0.0


def _products_by_size(level_counts: Sequence[int]) -> list[set[int]]:
    """Distinct category counts reachable by variable sets of each size."""
    p = len(level_counts)
    sizes: list[set[int]] = [{1}] + [set() for _ in range(p)]
    for l in level_counts:
        for k in range(p, 0, -1):
            sizes[k] |= {x * int(l) for x in sizes[k - 1]}
    return sizes


def _level_counts_of(schema_or_counts) -> tuple[int, ...]:
    if isinstance(schema_or_counts, Schema):
        return schema_or_counts.level_counts
    return tuple(int(l) for l in schema_or_counts)


def compute_maxlen(schema_or_counts, n: int, alpha_ci: float) -> int:
    """Largest itemset length for which every variable set keeps ``sigma >= 2``.

    Raises:
        DegenerateDataError: some single column already has ``sigma < 2``.
    """
    counts = _level_counts_of(schema_or_counts)
    if not counts:
        raise ValueError("no discrete columns")
    for j, l in enumerate(counts):
        if _safe_threshold(l, n, alpha_ci) < 2:
            raise DegenerateDataError(
                f"discrete column {j} with {l} levels is too fine for {n} rows"
            )
    sizes = _products_by_size(counts)
    maxlen = 1
    for k in range(2, len(counts) + 1):
        if min(_safe_threshold(K, n, alpha_ci) for K in sizes[k]) < 2:
            break
        maxlen = k
    return maxlen


def max_threshold(schema_or_counts, n: int, alpha_ci: float, length: int) -> float:
    """Largest ``sigma`` among variable sets of the given length (Xi)."""
    sizes = _products_by_size(_level_counts_of(schema_or_counts))
    return max(_safe_threshold(K, n, alpha_ci) for K in sizes[length])


# ---------------------------------------------------------------- association


def _entropy(counts: np.ndarray) -> float:
    c = counts[counts > 0].astype(float)
    p = c / c.sum()
    return float(-(p * np.log(p)).sum())


def theils_u(x, y) -> float:
    """Uncertainty coefficient U(x | y) = (H(x) - H(x|y)) / H(x)."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError("columns must have equal length")
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    return _theils_u_codes(xi.ravel(), yi.ravel())


def _theils_u_codes(xi: np.ndarray, yi: np.ndarray) -> float:
    rx, ry = int(xi.max()) + 1, int(yi.max()) + 1
    hx = _entropy(np.bincount(xi, minlength=rx))
    if hx <= 1e-15:
        raise UndefinedAssociationError("x is constant: H(x) = 0")
    hxy = _entropy(np.bincount(xi * ry + yi, minlength=rx * ry))
    hy = _entropy(np.bincount(yi, minlength=ry))
    u = (hx - (hxy - hy)) / hx
    return float(min(max(u, 0.0), 1.0))


def u_upper_threshold(ell_j: int, ell_jprime: int, n: int, seed, reps: int = U_REPS) -> float:
    """Mean over ``reps`` draws of ``max(U(a|b), U(b|a))`` for discretized 0.35-correlated normals.

    ``seed`` may be an int or a sequence of ints (e.g. ``[seed, j, j']``).
    """
    if ell_j < 2 or ell_jprime < 2:
        raise ValueError("level counts must be >= 2")
    rng = np.random.default_rng(seed)
    r = U_CORRELATION
    tail = math.sqrt(1.0 - r * r)
    maxima = np.empty(reps)
    for t in range(reps):
        z = rng.standard_normal((2, n))
        a = quantile_discretize(z[0], ell_j)
        b = quantile_discretize(r * z[0] + tail * z[1], ell_jprime)
        maxima[t] = max(_theils_u_codes(a, b), _theils_u_codes(b, a))
    return float(maxima.mean())


# ---------------------------------------------------------------- model


def _encode(block: np.ndarray, radices: Sequence[int]) -> np.ndarray:
    code = np.zeros(block.shape[0], dtype=np.int64)
    for k, r in enumerate(radices):
        code = code * int(r) + block[:, k]
    return code


def _decode(code: int, radices: Sequence[int]) -> tuple[int, ...]:
    out = []
    for r in reversed(radices):
        code, rem = divmod(int(code), int(r))
        out.append(rem)
    return tuple(reversed(out))


@dataclass
class ItemsetModel:
    """Fitted discrete-score state.

    ``tables[S]`` holds the sorted encoded itemsets over variable set ``S``
    that were counted (not pruned), with their supports.
    """

    n: int
    level_counts: tuple[int, ...]
    level_codes: tuple[tuple[str, ...], ...]
    alpha_ci: float
    maxlen: int
    xi: float
    thresholds: dict[tuple[int, ...], float]
    excluded_pairs: frozenset[tuple[int, int]]
    u_scores: dict[tuple[int, int], tuple[float, float]]
    u_upper: dict[tuple[int, int], float]
    seed: int
    tables: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = field(repr=False)

    @property
    def radices(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.level_codes)

    @property
    def variable_sets(self) -> list[tuple[int, ...]]:
        return list(self.thresholds)

    @property
    def supports(self) -> dict[Itemset, int]:
        """Counted itemsets in lexicographic order (variable set, then level codes)."""
        out: dict[Itemset, int] = {}
        rad = self.radices
        for S in self.thresholds:
            codes, counts = self.tables[S]
            items = []
            for code, cnt in zip(codes, counts):
                idx = _decode(code, [rad[v] for v in S])
                items.append((tuple(self.level_codes[v][k] for v, k in zip(S, idx)), int(cnt)))
            for levels, cnt in sorted(items):
                out[Itemset(S, levels)] = cnt
        return out

    def infrequent_itemsets(self) -> dict[Itemset, int]:
        return {d: c for d, c in self.supports.items() if c < self.thresholds[d.variables]}

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "alpha_ci": self.alpha_ci,
            "seed": self.seed,
            "maxlen": self.maxlen,
            "xi": self.xi,
            "level_counts": list(self.level_counts),
            "level_codes": [list(c) for c in self.level_codes],
            "thresholds": [{"variables": list(S), "sigma": s} for S, s in self.thresholds.items()],
            "excluded_pairs": [list(p) for p in sorted(self.excluded_pairs)],
            "u_scores": [
                {"pair": list(p), "u_forward": u[0], "u_backward": u[1], "u_upper": self.u_upper[p]}
                for p, u in sorted(self.u_scores.items())
            ],
            "supports": [
                {"variables": list(d.variables), "levels": list(d.levels), "support": c}
                for d, c in self.supports.items()
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ItemsetModel":
        level_codes = tuple(tuple(c) for c in raw["level_codes"])
        rad = [len(c) for c in level_codes]
        lookup = [{code: k for k, code in enumerate(c)} for c in level_codes]
        thresholds = {tuple(t["variables"]): float(t["sigma"]) for t in raw["thresholds"]}
        grouped: dict[tuple[int, ...], list[tuple[int, int]]] = {S: [] for S in thresholds}
        for s in raw["supports"]:
            S = tuple(s["variables"])
            idx = [lookup[v][code] for v, code in zip(S, s["levels"])]
            code = 0
            for v, k in zip(S, idx):
                code = code * rad[v] + k
            grouped[S].append((code, int(s["support"])))
        tables = {}
        for S, pairs in grouped.items():
            pairs.sort()
            tables[S] = (
                np.array([p[0] for p in pairs], dtype=np.int64),
                np.array([p[1] for p in pairs], dtype=np.int64),
            )
        u_scores = {tuple(u["pair"]): (u["u_forward"], u["u_backward"]) for u in raw["u_scores"]}
        u_upper = {tuple(u["pair"]): u["u_upper"] for u in raw["u_scores"]}
        return cls(
            n=raw["n"],
            level_counts=tuple(raw["level_counts"]),
            level_codes=level_codes,
            alpha_ci=raw["alpha_ci"],
            maxlen=raw["maxlen"],
            xi=raw["xi"],
            thresholds=thresholds,
            excluded_pairs=frozenset(tuple(p) for p in raw["excluded_pairs"]),
            u_scores=u_scores,
            u_upper=u_upper,
            seed=raw["seed"],
            tables=tables,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _has_excluded(S: tuple[int, ...], excluded: frozenset[tuple[int, int]]) -> bool:
    return any(pair in excluded for pair in itertools.combinations(S, 2))


def _correlation_exclusions(D: np.ndarray, counts, seed: int):
    n, p = D.shape
    u_scores: dict[tuple[int, int], tuple[float, float]] = {}
    u_upper: dict[tuple[int, int], float] = {}
    excluded = set()
    for j, k in itertools.combinations(range(p), 2):
        try:
            fwd = _theils_u_codes(D[:, j], D[:, k])
            bwd = _theils_u_codes(D[:, k], D[:, j])
        except UndefinedAssociationError:
            continue
        up = u_upper_threshold(counts[j], counts[k], n, [int(seed), j, k])
        u_scores[(j, k)] = (fwd, bwd)
        u_upper[(j, k)] = up
        if fwd > up or bwd > up:
            excluded.add((j, k))
    return frozenset(excluded), u_scores, u_upper


def fit_discrete(
    data: MixedDataset,
    cfg: DetectionConfig,
    *,
    correlation_correction: bool = True,
) -> ItemsetModel:
    """Count itemsets level-wise up to ``maxlen`` with support-based pruning.

    A variable set is only visited when it contains no excluded pair; an
    itemset is counted only when none of its one-shorter sub-itemsets is
    infrequent or itself pruned.
    """
    schema = data.schema
    if schema.p_d == 0:
        raise ValueError("no discrete columns to fit")
    D = data.discrete
    n, p = D.shape
    counts = schema.level_counts
    maxlen = compute_maxlen(counts, n, cfg.alpha_ci)
    xi = max_threshold(counts, n, cfg.alpha_ci, maxlen)
    if maxlen >= 2 and correlation_correction:
        excluded, u_scores, u_upper = _correlation_exclusions(D, counts, cfg.seed)
    else:
        excluded, u_scores, u_upper = frozenset(), {}, {}
    level_codes = tuple(c.levels for c in schema.discrete)
    rad = [len(c) for c in level_codes]

    thresholds: dict[tuple[int, ...], float] = {}
    tables: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
    stop: dict[tuple[int, ...], np.ndarray] = {}
    for k in range(1, maxlen + 1):
        for S in itertools.combinations(range(p), k):
            if k >= 2 and _has_excluded(S, excluded):
                continue
            sigma = support_threshold([counts[v] for v in S], n, cfg.alpha_ci)
            thresholds[S] = sigma
            codes = _encode(D[:, S], [rad[v] for v in S])
            uniq, inv, cnt = np.unique(codes, return_inverse=True, return_counts=True)
            blocked = np.zeros(n, dtype=bool)
            if k >= 2:
                for sub in itertools.combinations(S, k - 1):
                    blocked |= stop[sub]
            # pruning status is shared by every row holding the same itemset
            keep = np.zeros(len(uniq), dtype=bool)
            keep[inv[~blocked]] = True
            tables[S] = (uniq[keep], cnt[keep].astype(np.int64))
            stop[S] = blocked | (cnt[inv] < sigma)
    log.debug("fitted itemsets: maxlen=%d, %d variable sets, %d excluded pairs",
              maxlen, len(thresholds), len(excluded))
    return ItemsetModel(
        n=n,
        level_counts=tuple(counts),
        level_codes=level_codes,
        alpha_ci=cfg.alpha_ci,
        maxlen=maxlen,
        xi=xi,
        thresholds=thresholds,
        excluded_pairs=excluded,
        u_scores=u_scores,
        u_upper=u_upper,
        seed=int(cfg.seed),
        tables=tables,
    )


def discrete_scores(model: ItemsetModel, data: MixedDataset):
    """Score rows against a fitted model.

    Returns:
        ``(scores, contributions, unit_infrequent)``. Itemsets absent from
        the model (never observed while fitting) count with support 1.
    """
    D = data.discrete
    n, p = D.shape
    if p != len(model.level_counts):
        raise ValueError("data and model disagree on the number of discrete columns")
    rad = model.radices
    scores = np.zeros(n)
    contrib = np.zeros((n, p))
    unit = np.zeros(n, dtype=bool)
    stop: dict[tuple[int, ...], np.ndarray] = {}
    for S, sigma in model.thresholds.items():
        k = len(S)
        codes = _encode(D[:, S], [rad[v] for v in S])
        known, support = model.tables[S]
        pos = np.searchsorted(known, codes)
        pos_c = np.minimum(pos, max(len(known) - 1, 0))
        found = (pos < len(known)) & (known[pos_c] == codes) if len(known) else np.zeros(n, bool)
        supp = np.where(found, support[pos_c] if len(known) else 1, 1).astype(float)
        infrequent = supp < sigma
        blocked = np.zeros(n, dtype=bool)
        if k >= 2:
            for sub in itertools.combinations(S, k - 1):
                blocked |= stop[sub]
        else:
            unit |= infrequent
        stop[S] = blocked | infrequent
        hit = infrequent & ~blocked
        if not hit.any():
            continue
        scores[hit] += 1.0 / (supp[hit] * k * k)
        share = 1.0 / (supp[hit] * k**3)
        for v in S:
            contrib[hit, v] += share
    return scores, contrib, unit


# ---------------------------------------------------------------- bounds and maxima


@dataclass(frozen=True)
class MomentBounds:
    mean_lower: float
    mean_upper: float
    sd_lower: float
    sd_upper: float


def score_moment_bounds(scores, model: ItemsetModel, p_d: int) -> MomentBounds:
    """Closed-form bounds on the sample mean and sd of the discrete scores.

    The sd upper bound is ``sqrt((p_D (|E|-1) s_max - n m_lo**2) / (n-1))``
    with ``m_lo`` the mean lower bound; it follows from
    ``sum s_i**2 <= s_max * sum s_i``.
    """
    s = np.asarray(scores, dtype=float)
    n = s.size
    uniq = np.unique(s)
    if uniq.size < 2:
        raise BoundsInapplicableError("all scores are equal")
    if model.xi <= 1:
        raise BoundsInapplicableError("largest maxlen threshold must exceed 1")
    m, e = model.maxlen, uniq.size
    mean_lower = 1.0 / (n * (model.xi - 1) * m * m)
    mean_upper = p_d * (e - 1) / n
    sd_lower = 1.0 / (math.sqrt(n) * m * m * (model.xi - 1))
    radicand = p_d * (e - 1) * uniq[-1] - n * mean_lower**2
    sd_upper = math.sqrt(max(radicand, 0.0) / (n - 1))
    return MomentBounds(mean_lower, mean_upper, sd_lower, sd_upper)


def theoretical_max_score(p_d: int, maxlen: int) -> float:
    """Largest possible discrete score of one row."""
    if p_d < 1 or maxlen < 1:
        raise ValueError("p_d and maxlen must be >= 1")
    if p_d <= 8:
        return float(p_d)
    k = min(maxlen, 3) if p_d <= 10 else min(maxlen, p_d // 2 - 1)
    return math.comb(p_d, k) / k**2


def theoretical_max_contribution(p_d: int, maxlen: int) -> float:
    """Largest possible single contribution entry."""
    if p_d < 1 or maxlen < 1:
        raise ValueError("p_d and maxlen must be >= 1")
    if p_d <= 13:
        return float(p_d)
    if p_d == 14:
        k = min(maxlen, 5) if maxlen >= 4 else 1
    elif p_d == 15:
        k = min(maxlen, 5) if maxlen >= 3 else 1
    elif p_d == 16:
        k = min(maxlen, 6) if maxlen >= 3 else 1
    elif p_d == 17:
        k = min(maxlen, 6)
    else:
        k = min(maxlen, math.floor(p_d / 2 - 5 / 4))
    return math.comb(p_d, k) / k**3
