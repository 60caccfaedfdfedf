"""Quantile discretization shared by the generator and the U-score simulation."""

from __future__ import annotations

import numpy as np


class DiscretizationError(ValueError):
    pass


def quantile_discretize(values, levels: int) -> np.ndarray:
    """Map reals to 0-based levels using cut points at the ``i/levels`` quantiles.

    A value equal to a cut point goes to the lower level, so level ``k`` holds
    values in ``(q_k, q_{k+1}]``.
    """
    x = np.asarray(values, dtype=float)
    if levels < 2:
        raise DiscretizationError("need at least 2 levels")
    if np.unique(x).size < levels:
        raise DiscretizationError(f"fewer than {levels} distinct values")
    cuts = np.quantile(x, np.arange(1, levels) / levels)
    return np.searchsorted(cuts, x, side="left").astype(np.int64)
