"""Kruskal-Wallis screening, Pearson goodness of fit and Holm step-down."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


class TestError(ValueError):
    pass


TestError.__test__ = False  # keep pytest from collecting it


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    log_p: float
    df: int


def kruskal_wallis(groups) -> TestResult:
    """H test with midrank tie correction; p from chi-square with ``len(groups) - 1`` df."""
    groups = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(groups) < 2:
        raise TestError("need at least two groups")
    if any(g.size == 0 for g in groups):
        raise TestError("every group must be non-empty")
    if sum(g.size for g in groups) < 3:
        raise TestError("need at least three observations")
    df = len(groups) - 1
    pooled = np.concatenate(groups)
    if np.all(pooled == pooled[0]):
        # every rank tied: the corrected statistic is 0/0, read as no evidence
        return TestResult(0.0, 1.0, 0.0, df)
    h, _ = stats.kruskal(*groups)
    return TestResult(float(h), float(stats.chi2.sf(h, df)), float(stats.chi2.logsf(h, df)), df)


def chi_square_gof(observed, expected_probs) -> TestResult:
    """Pearson statistic ``sum (O - E)^2 / E`` with ``E = k * pi``; ``len(pi) - 1`` df."""
    obs = np.asarray(observed, dtype=float)
    pi = np.asarray(expected_probs, dtype=float)
    if obs.shape != pi.shape or obs.ndim != 1 or obs.size < 2:
        raise TestError("observed and expected must be matching vectors of length >= 2")
    if np.any(pi <= 0):
        raise TestError("expected probabilities must be strictly positive")
    if not math.isclose(pi.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
        raise TestError("expected probabilities must sum to 1")
    k = obs.sum()
    if k < 1 or np.any(obs < 0):
        raise TestError("observed counts must be non-negative with a positive total")
    e = k * pi
    stat = float(((obs - e) ** 2 / e).sum())
    df = obs.size - 1
    return TestResult(stat, float(stats.chi2.sf(stat, df)), float(stats.chi2.logsf(stat, df)), df)


def holm_all_reject(log_p, alpha: float) -> bool:
    """True when Holm's step-down rejects every hypothesis at level ``alpha``.

    Works on log p-values so that underflowed tails still compare correctly.
    """
    lp = np.sort(np.asarray(log_p, dtype=float))
    m = lp.size
    if m == 0:
        return False
    bounds = np.log(alpha / (m - np.arange(m)))
    return bool(np.all(lp <= bounds))
