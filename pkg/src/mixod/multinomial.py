"""Simultaneous confidence intervals for multinomial proportions (Sison-Glaz).

The interval half-width ``c`` solves ``nu(c) <= 1 - alpha < nu(c + 1)`` where
``nu`` approximates the probability that every multinomial count falls in
``[count - c, count + c]``. ``nu`` is a product of Poisson box probabilities
times an Edgeworth correction for the conditioning on the total.

Counts are passed as distinct values with multiplicities so that the uniform
case over a very large number of categories costs O(1) per evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


class ThresholdError(ValueError):
    """The category count is too large to evaluate."""


MAX_CATEGORIES = 10**15


def _box(lam: float, lo: float, hi: float) -> float:
    """P(lo <= X <= hi) for X ~ Poisson(lam), following the usual cdf(hi) - cdf(lo - 1)."""
    if hi < lo:
        return 0.0
    return float(stats.poisson.cdf(hi, lam) - stats.poisson.cdf(lo - 1, lam))


def _factorial_moment(lam: float, lo: float, hi: float, r: int, box: float) -> float:
    return lam**r * (1.0 - (_box(lam, hi - r + 1, hi) - _box(lam, lo - r, lo - 1)) / box)


def _log_nu(values: np.ndarray, weights: np.ndarray, n: float, c: float) -> float:
    log_box = 0.0
    m1 = m2 = m3 = m4 = 0.0
    for lam, w in zip(values, weights):
        lo, hi = max(lam - c, 0.0), min(lam + c, n)
        box = _box(lam, lo, hi)
        if box <= 0.0:
            return -math.inf
        log_box += w * math.log(box)
        r1, r2, r3, r4 = (_factorial_moment(lam, lo, hi, r, box) for r in (1, 2, 3, 4))
        mu = r1
        mu2 = r2 + mu - mu**2
        mu3 = r3 + r2 * (3 - 3 * mu) + mu - 3 * mu**2 + 2 * mu**3
        mu4 = (
            r4
            + r3 * (6 - 4 * mu)
            + r2 * (7 - 12 * mu + 6 * mu**2)
            + mu
            - 4 * mu**2
            + 6 * mu**3
            - 3 * mu**4
        )
        m1 += w * mu
        m2 += w * mu2
        m3 += w * mu3
        m4 += w * (mu4 - 3 * mu2**2)
    if m2 <= 0.0:
        return -math.inf
    g1 = m3 / m2**1.5
    g2 = m4 / m2**2
    x = (n - m1) / math.sqrt(m2)
    h3 = x**3 - 3 * x
    h4 = x**4 - 6 * x**2 + 3
    h6 = x**6 - 15 * x**4 + 45 * x**2 - 15
    edge = 1 + g1 * h3 / 6 + g2 * h4 / 24 + g1**2 * h6 / 72
    if edge <= 0.0:
        return -math.inf
    log_f = -(x**2) / 2 - 0.5 * math.log(2 * math.pi) + math.log(edge) - 0.5 * math.log(m2)
    return log_box + log_f - float(stats.poisson.logpmf(n, n))


@dataclass(frozen=True)
class SisonGlaz:
    """Solved interval parameters: ``c`` and the interpolation weight ``gamma``."""

    c: int
    gamma: float
    n: float

    def lower(self, count: float) -> float:
        return max(count - self.c, 0.0) / self.n

    def upper(self, count: float) -> float:
        return min(count + self.c + 2 * self.gamma, self.n) / self.n


def sison_glaz(values, weights, alpha: float) -> SisonGlaz:
    """Solve for ``c`` given distinct counts ``values`` occurring ``weights`` times."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = float(np.sum(values * weights))
    n = float(round(total)) if abs(total - round(total)) < 1e-6 * max(total, 1.0) else total
    target = 1.0 - alpha

    def nu(c: float) -> float:
        return math.exp(_log_nu(values, weights, n, c))

    c = 1
    nu_c, nu_next = nu(c), nu(c + 1)
    if nu_c > target:
        # the narrowest integer box already covers: no slack below the count
        return SisonGlaz(0, 0.0, n)
    while not (nu_c <= target < nu_next):
        if c > n:
            raise ThresholdError("no half-width solves nu(c) <= 1 - alpha < nu(c + 1)")
        c += 1
        nu_c, nu_next = nu_next, nu(c + 1)
    gamma = (target - nu_c) / (nu_next - nu_c)
    return SisonGlaz(c, gamma, n)


def sison_glaz_intervals(counts, alpha: float) -> np.ndarray:
    """``(K, 2)`` array of simultaneous lower/upper proportion bounds."""
    counts = np.asarray(counts, dtype=float)
    values, weights = np.unique(counts, return_counts=True)
    sol = sison_glaz(values, weights, alpha)
    return np.array([[sol.lower(x), sol.upper(x)] for x in counts])


def uniform_lower_count(n: int, categories: int, alpha: float) -> float:
    """``n`` times the simultaneous lower bound for a uniform multinomial.

    Every category carries the expected count ``n / categories``; the result
    is clamped at zero.
    """
    if categories < 1:
        raise ValueError("need at least one category")
    if categories > MAX_CATEGORIES:
        raise ThresholdError(f"{categories} categories exceed the supported range")
    if categories == 1:
        return float(n)
    expected = n / categories
    sol = sison_glaz([expected], [categories], alpha)
    return max(expected - sol.c, 0.0)
