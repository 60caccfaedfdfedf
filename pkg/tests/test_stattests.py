import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mixod.stattests import TestError, chi_square_gof, holm_all_reject, kruskal_wallis


def test_kw_two_by_two_fixture():
    r = kruskal_wallis([[1, 2], [3, 4]])
    assert r.statistic == pytest.approx(2.4, abs=1e-12)
    assert r.df == 1
    assert r.p_value == pytest.approx(0.1213, abs=1e-4)
    assert r.p_value == pytest.approx(stats.chi2.sf(2.4, 1), rel=1e-12)


def test_kw_all_tied():
    r = kruskal_wallis([[3, 3, 3], [3, 3]])
    assert (r.statistic, r.p_value) == (0.0, 1.0)


def test_kw_errors():
    with pytest.raises(TestError):
        kruskal_wallis([[1, 2], []])
    with pytest.raises(TestError):
        kruskal_wallis([[1, 2, 3]])
    with pytest.raises(TestError):
        kruskal_wallis([[1], [2]])


def test_kw_size_under_null():
    rng = np.random.default_rng(0)
    rejections = sum(kruskal_wallis([rng.normal(size=500), rng.normal(size=500)]).p_value < 0.05 for _ in range(1000))
    assert 0.035 <= rejections / 1000 <= 0.065


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_kw_rank_invariance(seed):
    rng = np.random.default_rng(seed)
    groups = [rng.normal(size=20), rng.normal(0.5, size=25), rng.normal(size=15)]
    a = kruskal_wallis(groups)
    b = kruskal_wallis([np.exp(g) * 3 + 1 for g in groups])
    assert a.statistic == b.statistic


def test_gof_fixture():
    r = chi_square_gof([10, 0, 0], [0.4, 0.35, 0.25])
    assert r.statistic == pytest.approx(15.0, abs=1e-12)
    assert r.log_p == pytest.approx(-7.5, abs=1e-12)
    assert r.p_value == pytest.approx(5.531e-4, rel=1e-3)


def test_gof_exact_expectation():
    r = chi_square_gof([4, 3, 3], [0.4, 0.3, 0.3])
    assert r.statistic == pytest.approx(0.0, abs=1e-12)
    assert r.p_value == pytest.approx(1.0)


def test_gof_errors():
    with pytest.raises(TestError):
        chi_square_gof([5, 5], [1.0, 0.0])
    with pytest.raises(TestError):
        chi_square_gof([5, 5], [0.6, 0.6])
    with pytest.raises(TestError):
        chi_square_gof([0, 0], [0.5, 0.5])


def _compositions(k, parts):
    for cuts in itertools.combinations(range(k + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(k + parts - 2 - prev)
        yield out


PROPORTIONS = {
    2: [(0.5, 0.5), (0.7, 0.3), (0.3, 0.7)],
    3: [(0.4, 0.35, 0.25), (1 / 3, 1 / 3, 1 / 3), (0.2, 0.5, 0.3)],
    4: [(0.25, 0.25, 0.25, 0.25), (0.4, 0.2, 0.2, 0.2), (0.1, 0.3, 0.3, 0.3)],
}


def _pure_wins(pi, own):
    # the statistic is convex in the counts, so the maximum sits on a vertex
    # of {own count >= k/2}: pure, or half own and half some level m.
    return all(pi[m] >= pi[own] / 3 for m in range(len(pi)) if m != own)


@pytest.mark.parametrize("levels", [2, 3, 4])
def test_gof_statistic_maximized_by_pure_neighbourhood(levels):
    checked = 0
    for pi in PROPORTIONS[levels]:
        for own in range(levels):
            if not _pure_wins(pi, own):
                continue
            for k in range(1, 13):
                best = max(chi_square_gof(c, pi).statistic for c in _compositions(k, levels) if c[own] >= k / 2)
                pure = [0] * levels
                pure[own] = k
                assert chi_square_gof(pure, pi).statistic == pytest.approx(best, rel=1e-12)
                checked += 1
    assert checked >= 12 * levels


def test_gof_fixture_pure_is_maximal():
    pi = (0.4, 0.35, 0.25)
    best = max(_compositions(10, 3), key=lambda c: chi_square_gof(c, pi).statistic if c[0] >= 5 else -1)
    assert best == [10, 0, 0]


def test_gof_pure_not_maximal_when_a_level_is_rare():
    # own level far more common than another: half-and-half beats pure
    pi = (0.7, 0.1, 0.2)
    pure = chi_square_gof([10, 0, 0], pi).statistic
    mixed = chi_square_gof([5, 5, 0], pi).statistic
    assert mixed > pure


REFERENCE = [(0.5, 1), (3.84, 1), (15.0, 2), (7.8, 3), (40.0, 3), (2.0, 5), (25.0, 4), (100.0, 6),
             (1e-3, 2), (60.0, 1), (11.3, 7), (0.2, 1), (300.0, 3), (5.0, 2), (9.0, 9), (33.0, 10),
             (18.0, 2), (1.0, 1), (70.0, 4), (150.0, 2)]


@pytest.mark.parametrize("x,df", REFERENCE)
def test_chi_square_tail_accuracy(x, df):
    mpmath.mp.dps = 50
    exact = mpmath.gammainc(mpmath.mpf(df) / 2, mpmath.mpf(x) / 2, mpmath.inf, regularized=True)
    k = df + 1
    pi = np.full(k, 1.0 / k)
    got = stats.chi2.logsf(x, df)
    assert math.isclose(got, float(mpmath.log(exact)), rel_tol=1e-10)
    assert math.isclose(stats.chi2.sf(x, df), float(exact), rel_tol=1e-10)
    assert chi_square_gof([1] * k, pi).df == df


def test_holm_all_reject():
    assert holm_all_reject(np.log([0.001, 0.002, 0.003]), 0.01)
    assert not holm_all_reject(np.log([0.001, 0.002, 0.02]), 0.01)
    assert not holm_all_reject([], 0.01)
    # underflowed p-values still compare
    assert holm_all_reject([-2000.0, -1500.0], 0.01)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-12, 1.0), min_size=1, max_size=8))
def test_holm_implies_raw_rejection(ps):
    if holm_all_reject(np.log(ps), 0.01):
        assert max(ps) <= 0.01
