"""Extended isolation forest: random inclined-hyperplane trees for continuous scores.

Each tree is stored as flat arrays. Internal node ``k`` sends a point ``x`` to
``left[k]`` when ``(x - intercept[k]) . normal[k] <= 0`` and to ``right[k]``
otherwise; a node with ``left[k] == -1`` is a leaf holding ``size[k]``
training points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numba
import numpy as np

EULER_GAMMA = 0.5772156649015329
_EXACT_LIMIT = 10_000


class NormalizerError(ValueError):
    pass


class NoContinuousColumnsError(ValueError):
    pass


def harmonic_normalizer(n_s: int) -> float:
    """Average unsuccessful-search path length ``c(n) = 2 H_{n-1} - 2 (n-1)/n``."""
    if n_s < 2:
        raise NormalizerError("c(n) needs n >= 2")
    if n_s <= _EXACT_LIMIT:
        h = math.fsum(1.0 / k for k in range(1, n_s))
    else:
        h = math.log(n_s - 1) + EULER_GAMMA
    return 2.0 * h - 2.0 * (n_s - 1) / n_s


def _normalizer_table(n_max: int) -> np.ndarray:
    """``c(m)`` for leaf sizes ``m = 0..n_max`` with ``c(0) = c(1) = 0``."""
    out = np.zeros(n_max + 1)
    h = 0.0
    for m in range(2, n_max + 1):
        h += 1.0 / (m - 1)
        out[m] = 2.0 * h - 2.0 * (m - 1) / m
    return out


@dataclass(frozen=True)
class ForestConfig:
    trees: int = 500
    subsample: int = 256
    max_height: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.trees < 1 or self.subsample < 2 or self.max_height < 0:
            raise ValueError("need trees >= 1, subsample >= 2 and max_height >= 0")


@dataclass(frozen=True)
class IsolationTree:
    normal: np.ndarray
    intercept: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.left.size)

    def to_dict(self) -> dict[str, Any]:
        return {
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "size": self.size.tolist(),
            "normal": self.normal.tolist(),
            "intercept": self.intercept.tolist(),
        }


# ---------------------------------------------------------------- numba kernels


@numba.njit(cache=True)
def _grow(arr, cap):
    out = np.empty((cap,) + arr.shape[1:], dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@numba.njit(cache=True)
def _build_tree(X, seed, n_sub, max_height):
    np.random.seed(seed)
    n, p = X.shape
    # partial Fisher-Yates for a subsample without replacement
    perm = np.arange(n)
    for i in range(n_sub):
        j = i + np.random.randint(n - i)
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t
    pts = X[perm[:n_sub]].copy()
    idx = np.arange(n_sub)

    cap = 4 * n_sub + 8
    normal = np.zeros((cap, p))
    intercept = np.zeros((cap, p))
    left = -np.ones(cap, dtype=np.int64)
    right = -np.ones(cap, dtype=np.int64)
    size = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    lo_of = np.zeros(cap, dtype=np.int64)
    hi_of = np.zeros(cap, dtype=np.int64)

    count = 1
    size[0] = n_sub
    lo_of[0] = 0
    hi_of[0] = n_sub
    stack = np.zeros(cap, dtype=np.int64)
    top = 1
    stack[0] = 0
    proj = np.zeros(n_sub)
    mins = np.empty(p)
    maxs = np.empty(p)
    nv = np.empty(p)
    cp = np.empty(p)
    while top > 0:
        top -= 1
        node = stack[top]
        lo = lo_of[node]
        hi = hi_of[node]
        m = hi - lo
        if m <= 1 or depth[node] >= max_height:
            continue
        for k in range(p):
            mins[k] = pts[idx[lo], k]
            maxs[k] = mins[k]
        for r in range(lo + 1, hi):
            for k in range(p):
                v = pts[idx[r], k]
                if v < mins[k]:
                    mins[k] = v
                elif v > maxs[k]:
                    maxs[k] = v
        spread = False
        for k in range(p):
            if maxs[k] > mins[k]:
                spread = True
        if not spread:
            continue
        for k in range(p):
            nv[k] = np.random.standard_normal()
        for k in range(p):
            cp[k] = mins[k] + np.random.random() * (maxs[k] - mins[k])
        # partition idx[lo:hi] in place: left side first
        cut = lo
        for r in range(lo, hi):
            s = 0.0
            for k in range(p):
                s += (pts[idx[r], k] - cp[k]) * nv[k]
            proj[r] = s
        for r in range(lo, hi):
            if proj[r] <= 0.0:
                t = idx[cut]
                idx[cut] = idx[r]
                idx[r] = t
                tp = proj[cut]
                proj[cut] = proj[r]
                proj[r] = tp
                cut += 1
        if count + 2 > normal.shape[0]:
            newcap = 2 * normal.shape[0]
            normal = _grow(normal, newcap)
            intercept = _grow(intercept, newcap)
            left = _grow(left, newcap)
            right = _grow(right, newcap)
            size = _grow(size, newcap)
            depth = _grow(depth, newcap)
            lo_of = _grow(lo_of, newcap)
            hi_of = _grow(hi_of, newcap)
            stack = _grow(stack, newcap)
            for q in range(newcap // 2, newcap):
                left[q] = -1
                right[q] = -1
        a = count
        b = count + 1
        count += 2
        for k in range(p):
            normal[node, k] = nv[k]
            intercept[node, k] = cp[k]
        left[node] = a
        right[node] = b
        size[a] = cut - lo
        size[b] = hi - cut
        lo_of[a] = lo
        hi_of[a] = cut
        lo_of[b] = cut
        hi_of[b] = hi
        for child in (a, b):
            depth[child] = depth[node] + 1
            left[child] = -1
            right[child] = -1
            stack[top] = child
            top += 1
    return (normal[:count].copy(), intercept[:count].copy(), left[:count].copy(),
            right[:count].copy(), size[:count].copy(), depth[:count].copy())


@numba.njit(cache=True)
def _path_lengths(X, normal, intercept, left, right, size, offsets, cvals):
    n, p = X.shape
    trees = offsets.shape[0] - 1
    total = np.zeros(n)
    for t in range(trees):
        base = offsets[t]
        for i in range(n):
            node = base
            h = 0
            while left[node] >= 0:
                s = 0.0
                for k in range(p):
                    s += (X[i, k] - intercept[node, k]) * normal[node, k]
                node = base + (left[node] if s <= 0.0 else right[node])
                h += 1
            total[i] += h + cvals[size[node]]
    return total / trees


# ---------------------------------------------------------------- public API


@dataclass
class ExtendedIsolationForest:
    trees: list[IsolationTree]
    sample_size: int
    config: ForestConfig
    p: int
    _packed: tuple | None = field(default=None, repr=False)

    @property
    def normalizer(self) -> float:
        return harmonic_normalizer(self.sample_size)

    def _pack(self) -> tuple:
        if self._packed is None:
            sizes = [t.node_count for t in self.trees]
            offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
            offsets[1:] = np.cumsum(sizes)
            self._packed = (
                np.concatenate([t.normal for t in self.trees]),
                np.concatenate([t.intercept for t in self.trees]),
                np.concatenate([t.left for t in self.trees]),
                np.concatenate([t.right for t in self.trees]),
                np.concatenate([t.size for t in self.trees]),
                offsets,
            )
        return self._packed

    def mean_path_length(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} continuous columns")
        normal, intercept, left, right, size, offsets = self._pack()
        cvals = _normalizer_table(self.sample_size)
        return _path_lengths(X, normal, intercept, left, right, size, offsets, cvals)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": {
                "trees": self.config.trees,
                "subsample": self.config.subsample,
                "max_height": self.config.max_height,
                "seed": self.config.seed,
            },
            "sample_size": self.sample_size,
            "p": self.p,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def tree_seeds(seed: int, trees: int) -> np.ndarray:
    """Per-tree seeds derived from ``(seed, tree index)``; adding trees keeps earlier ones."""
    return np.array(
        [np.random.SeedSequence([int(seed), t]).generate_state(1)[0] for t in range(trees)],
        dtype=np.int64,
    )


def fit_forest(X, cfg: ForestConfig = ForestConfig()) -> ExtendedIsolationForest:
    """Grow ``cfg.trees`` trees on subsamples of ``min(cfg.subsample, n)`` rows."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] == 0:
        raise NoContinuousColumnsError("the forest needs at least one continuous column")
    n = X.shape[0]
    if n < 2:
        raise ValueError("the forest needs at least 2 rows")
    n_sub = min(cfg.subsample, n)
    trees = []
    for s in tree_seeds(cfg.seed, cfg.trees):
        parts = _build_tree(X, s, n_sub, cfg.max_height)
        trees.append(IsolationTree(*parts))
    return ExtendedIsolationForest(trees, n_sub, cfg, X.shape[1])


def continuous_scores(forest: ExtendedIsolationForest, X) -> np.ndarray:
    """Scores ``2 ** (-E(h) / c(n_s))`` in (0, 1]; larger means easier to isolate."""
    depth = forest.mean_path_length(X)
    return np.power(2.0, -depth / forest.normalizer)
