import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixod.data import DetectionConfig, ScoreProfile
from mixod.marginal import (
    LAMBDAS,
    ContinuousMarginal,
    DiscreteMarginal,
    detect_continuous_marginal,
    detect_discrete_marginal,
    detect_marginal,
    kmeans_1d,
    mode_by_longest_run,
    stable_part,
    zero_cluster_sizes,
)

CFG = DetectionConfig()


def _sse(x, labels):
    return sum(((x[labels == k] - x[labels == k].mean()) ** 2).sum() for k in np.unique(labels))


def _best_partition(x, K):
    """Exhaustive search over contiguous splits."""
    best = None
    for cuts in itertools.combinations(range(1, x.size), K - 1):
        labels = np.zeros(x.size, dtype=int)
        for c in cuts:
            labels[c:] += 1
        v = _sse(x, labels)
        if best is None or v < best[0] - 1e-12:
            best = (v, labels)
    return best


def test_kmeans_examples():
    assert kmeans_1d([0.0, 0.1, 5.0], 1).tolist() == [0, 0, 0]
    assert kmeans_1d([0.0, 0.1, 5.0], 2).tolist() == [0, 0, 1]
    assert kmeans_1d([0.0, 1.0, 2.0, 10.0, 11.0], 2).tolist() == [0, 0, 0, 1, 1]
    with pytest.raises(ValueError):
        kmeans_1d([0.0, 1.0], 3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=9, unique=True), st.integers(1, 9))
def test_kmeans_is_globally_optimal(values, K):
    x = np.sort(np.array(values))
    K = min(K, x.size)
    labels = kmeans_1d(x, K)
    assert _sse(x, labels) <= _best_partition(x, K)[0] + 1e-9


def test_zero_cluster_sizes_match_kmeans():
    x = np.array([0.0, 0.05, 0.1, 0.9, 1.0, 3.0, 3.2, 8.0])
    sizes = zero_cluster_sizes(x)
    assert sizes[0] == x.size
    for K in range(1, x.size + 1):
        assert sizes[K - 1] == int((kmeans_1d(x, K) == 0).sum())


def test_mode_tie_break_prefers_longest_run_then_later():
    assert mode_by_longest_run([5, 3, 3, 5, 5]) == 5
    assert mode_by_longest_run([4, 4, 2, 2]) == 2
    assert mode_by_longest_run([7, 6, 5]) == 5
    assert mode_by_longest_run([3, 1, 3, 2, 2]) == 2


def test_stable_part_drops_singleton_tail():
    assert stable_part([9, 5, 5, 3, 1, 1, 1]).tolist() == [9, 5, 5, 3]
    assert stable_part([1, 1]).tolist() == [1, 1]


def _profile(s_d, s_c=None, unit=None):
    n = len(s_d)
    return ScoreProfile(
        np.asarray(s_d, dtype=float),
        np.full(n, 0.45) if s_c is None else np.asarray(s_c, dtype=float),
        np.zeros((n, 1)),
        np.zeros(n, dtype=bool) if unit is None else np.asarray(unit),
    )


def test_all_zero_scores_flag_nothing():
    assert detect_discrete_marginal(_profile(np.zeros(100))).size == 0


def test_unique_levels_flagged_by_unit_rule():
    s = np.zeros(1000)
    s[:10] = np.linspace(1.0, 1.5, 10)
    unit = s > 0
    rows = detect_discrete_marginal(_profile(s, unit=unit))
    assert rows.tolist() == list(range(10))


def test_flagged_set_respects_budget():
    rng = np.random.default_rng(0)
    s = np.where(rng.random(500) < 0.4, rng.random(500), 0.0)
    stage = DiscreteMarginal(s, np.zeros(500, dtype=bool), CFG)
    for _, rows in stage:
        assert rows.size < CFG.flag_budget(500)


def test_continuous_identical_scores_flag_nothing():
    assert detect_continuous_marginal(_profile(np.zeros(50), np.full(50, 0.45)), []).size == 0


def test_continuous_single_high_score():
    rng = np.random.default_rng(4)
    s_c = 0.45 + rng.normal(0, 0.002, 500)
    s_c[13] = 0.95
    assert detect_continuous_marginal(_profile(np.zeros(500), s_c), []).tolist() == [13]


def test_single_spike_among_fifty_is_below_every_plateau():
    # one outlying difference among m has z-score at most sqrt(m - 1) (about 6.9
    # here), so |Delta| is 1 only for lambda <= 6 and the mode of the sequence is 0
    rng = np.random.default_rng(4)
    s_c = 0.45 + rng.normal(0, 0.002, 50)
    s_c[13] = 0.95
    stage = ContinuousMarginal(s_c, [], CFG)
    assert stage.trace.gap_counts == [1] * 5 + [0] * 14
    assert stage.flagged(0).size == 0


def test_continuous_two_gaps_plateau():
    rng = np.random.default_rng(7)
    inl = np.sort(0.45 + np.abs(rng.normal(0, 0.01, 2700)))
    mid = 0.62 + rng.normal(0, 0.004, 150)
    top = 0.80 + rng.normal(0, 0.004, 150)
    s_c = np.concatenate([inl, mid, top])
    stage = ContinuousMarginal(s_c, [], CFG)
    counts = dict(zip(LAMBDAS.tolist(), stage.trace.gap_counts))
    assert all(counts[lam] == counts[15] for lam in range(15, 19))
    assert len(stage.cuts) >= 2
    flagged = stage.flagged(0)
    assert set(flagged.tolist()) == set(range(2700, 3000))


def test_gap_counts_non_increasing():
    for seed in range(20):
        s_c = np.random.default_rng(seed).beta(2, 3, 400)
        g = ContinuousMarginal(s_c, [], CFG).trace.gap_counts
        assert all(a >= b for a, b in zip(g, g[1:]))


def test_discrete_rows_excluded_from_continuous_stage():
    s_d = np.zeros(300)
    s_d[:5] = 1.0
    s_c = np.full(300, 0.45) + np.random.default_rng(1).normal(0, 0.003, 300)
    s_c[:5] = 0.9
    s_c[5] = 0.9
    out = detect_marginal(s_d, s_d > 0, s_c, CFG)
    assert set(out.discrete.tolist()) == set(range(5))
    assert out.continuous.tolist() == [5]
    assert not set(out.discrete) & set(out.continuous)


def test_detect_marginal_deterministic_and_within_budget():
    rng = np.random.default_rng(3)
    s_d = np.where(rng.random(800) < 0.1, rng.random(800), 0.0)
    s_c = rng.beta(5, 6, 800)
    a = detect_marginal(s_d, s_d > 0.8, s_c, CFG)
    b = detect_marginal(s_d, s_d > 0.8, s_c, CFG)
    assert np.array_equal(a.discrete, b.discrete) and np.array_equal(a.continuous, b.continuous)
    assert a.discrete.size + a.continuous.size <= CFG.flag_budget(800)


def test_only_one_score_type():
    s_c = np.full(600, 0.45) + np.random.default_rng(2).normal(0, 0.002, 600)
    s_c[0] = 0.9
    out = detect_marginal(None, None, s_c, CFG)
    assert out.discrete.size == 0 and out.continuous.tolist() == [0]
    s_d = np.zeros(600)
    s_d[3] = 1.0
    out = detect_marginal(s_d, s_d > 0, None, CFG)
    assert out.discrete.tolist() == [3] and out.continuous.size == 0
