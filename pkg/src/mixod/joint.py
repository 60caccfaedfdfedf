"""Joint outliers: rows whose continuous context looks like a different level.

Each level of the discrete column gets a Gaussian KDE over the context
columns with a nearest-neighbour bandwidth. A row whose true level is not
the densest one gets the ratio ``Lambda = max density / true-level density``.
The misclassification curve ``N(L) = #{Lambda > L}`` over ``L = 1, 1.5, ...,
20`` drives the choice of the cut-off ``L*``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

GRID = np.arange(2, 41) / 2.0  # 1.0, 1.5, ..., 20.0
_MAD_SCALE = 1.4826
_LOG_2PI = math.log(2.0 * math.pi)

# elbow-angle thresholds in degrees, keyed by (context size, levels)
THETA_THRESH = {
    (3, 3): 167.50, (3, 4): 168.00, (3, 5): 168.10, (3, 6): 180.00, (3, 7): 180.00,
    (4, 3): 166.60, (4, 4): 167.90, (4, 5): 168.00, (4, 6): 180.00, (4, 7): 180.00,
}


def theta_thresh(context_size: int, levels: int) -> float:
    """Table lookup; size 2 borrows the size-3 row, sizes above 4 the size-4 row,
    and level counts are clamped to 3..7."""
    d = min(max(context_size, 3), 4)
    l = min(max(levels, 3), 7)
    return THETA_THRESH[(d, l)]


@dataclass(frozen=True)
class JointConfig:
    gamma: int = 3
    lambda_small: float = 3.0
    lambda_max_reasonable: float = 11.0
    kde_alpha: float = 0.3
    # the bandwidth is the kernel's reach: the Gaussian has sd h / kernel_scale
    kernel_scale: float = 2.5
    kneedle_sensitivity: float = 1.0

    def __post_init__(self) -> None:
        if self.gamma < 1:
            raise ValueError("gamma must be a positive integer")
        if not 0.0 < self.kde_alpha <= 1.0:
            raise ValueError("kde_alpha must lie in (0, 1]")
        if self.kernel_scale <= 0:
            raise ValueError("kernel_scale must be positive")
        if self.lambda_small < 1.0:
            raise ValueError("lambda_small must be >= 1")


# ---------------------------------------------------------------- density


class LevelDensity:
    """Adaptive-bandwidth Gaussian KDE for one level's points.

    Coordinates are standardized by the level's median and MAD; the bandwidth
    at a query is its distance to the ``max(1, floor(m * alpha))``-th nearest
    training point in that scale, and the kernel's standard deviation is
    that bandwidth divided by ``kernel_scale``. Densities are reported in the
    original units (the scaling Jacobian is included).
    """

    def __init__(self, points, alpha: float = 0.3, kernel_scale: float = 2.5):
        x = np.asarray(points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] < 2:
            raise ValueError("a level needs at least 2 points")
        center = np.median(x, axis=0)
        scale = _MAD_SCALE * np.median(np.abs(x - center), axis=0)
        sd = x.std(axis=0)
        scale = np.where(scale > 0, scale, sd)
        self.dims = np.flatnonzero(scale > 0)
        if self.dims.size < x.shape[1]:
            log.warning("dropping %d constant context column(s) from a level density", x.shape[1] - self.dims.size)
        self.center = center[self.dims]
        self.scale = scale[self.dims]
        self.train = (x[:, self.dims] - self.center) / self.scale
        self.m = x.shape[0]
        self.k = max(1, int(math.floor(self.m * alpha)))
        self.kernel_scale = float(kernel_scale)
        self._log_jac = float(np.log(self.scale).sum())

    def log_density(self, query, chunk: int = 512) -> np.ndarray:
        q = np.asarray(query, dtype=float)
        if q.ndim == 1:
            q = q[:, None]
        z = (q[:, self.dims] - self.center) / self.scale
        d = z.shape[1]
        out = np.empty(z.shape[0])
        if d == 0:
            out.fill(-np.inf)
            return out
        k = min(self.k, self.m) - 1
        for a in range(0, z.shape[0], chunk):
            zz = z[a : a + chunk]
            sq = ((zz[:, None, :] - self.train[None, :, :]) ** 2).sum(axis=2)
            h2 = np.partition(sq, k, axis=1)[:, k]
            h2 = np.where(h2 > 0, h2, np.finfo(float).tiny) / self.kernel_scale**2
            lk = -0.5 * sq / h2[:, None]
            out[a : a + chunk] = (
                logsumexp(lk, axis=1) - math.log(self.m) - 0.5 * d * (np.log(h2) + _LOG_2PI)
            )
        return out - self._log_jac

    def __call__(self, query) -> np.ndarray:
        return np.exp(self.log_density(query))


def kde_fit(points, kde_alpha: float = 0.3, kernel_scale: float = 2.5) -> LevelDensity:
    return LevelDensity(points, kde_alpha, kernel_scale)


# ---------------------------------------------------------------- curve


@dataclass
class MisclassCurve:
    grid: np.ndarray
    counts: np.ndarray
    log_ratio: np.ndarray
    predicted: np.ndarray
    skipped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def ratio(self) -> np.ndarray:
        return np.exp(self.log_ratio)

    def at(self, lam: float) -> int:
        return int(self.counts[int(round((lam - 1.0) * 2))])

    def flagged(self, lam: float) -> np.ndarray:
        """Positions (into the classified rows) with ratio above ``lam``."""
        return np.flatnonzero(self.log_ratio > math.log(lam))


def classify_and_ratio(X, codes, levels, densities) -> MisclassCurve:
    """Densest level per row and the log ratio to the row's own level.

    A tie with the true level counts as correct (ratio exactly 1). Rows where
    every level density underflows are skipped.
    """
    X = np.asarray(X, dtype=float)
    codes = np.asarray(codes)
    ld = np.column_stack([dens.log_density(X) for dens in densities])
    best = ld.max(axis=1)
    pos = {v: i for i, v in enumerate(levels)}
    own_idx = np.array([pos[c] for c in codes])
    own = ld[np.arange(len(codes)), own_idx]
    skipped = np.flatnonzero(~np.isfinite(best))
    log_ratio = np.where(np.isfinite(best), best - own, 0.0)
    log_ratio = np.where(np.isfinite(log_ratio), log_ratio, np.inf)
    log_ratio = np.maximum(log_ratio, 0.0)
    predicted = np.asarray(levels)[np.argmax(ld, axis=1)]
    predicted = np.where(log_ratio > 0, predicted, codes)
    thresholds = np.log(GRID)
    counts = np.array([(log_ratio > t).sum() for t in thresholds], dtype=np.int64)
    return MisclassCurve(GRID.copy(), counts, log_ratio, predicted, skipped)


# ---------------------------------------------------------------- threshold rules


@dataclass(frozen=True)
class Knee:
    value: float
    found: bool


def kneedle_elbow(curve, grid=GRID, sensitivity: float = 1.0) -> Knee:
    """Elbow of a convex decreasing curve.

    Both axes are scaled to [0, 1], the vertical axis is flipped, and the
    difference curve ``y - x`` is searched for local maxima. A local maximum
    counts when the difference later falls below it by ``sensitivity`` times
    the mean x-spacing before the next local maximum. The qualifying one
    with the largest difference wins; otherwise the last grid point is
    returned with ``found=False``.
    """
    y = np.asarray(curve, dtype=float)
    x = np.asarray(grid, dtype=float)
    if y.size < 3 or y.size != x.size:
        raise ValueError("need at least 3 matching points")
    if y.max() == y.min():
        return Knee(float(x[-1]), False)
    xn = (x - x[0]) / (x[-1] - x[0])
    yn = (y.max() - y) / (y.max() - y.min())
    diff = yn - xn
    step = float(np.mean(np.diff(xn)))
    maxima = [i for i in range(1, y.size - 1) if diff[i] > diff[i - 1] and diff[i] >= diff[i + 1]]
    best, best_val = None, -np.inf
    tol = 1e-12
    for a, i in enumerate(maxima):
        if diff[i] <= tol:
            continue
        stop = maxima[a + 1] if a + 1 < len(maxima) else y.size
        thresh = diff[i] - sensitivity * step
        if np.any(diff[i + 1 : stop] < thresh + tol) and diff[i] > best_val:
            best, best_val = i, diff[i]
    if best is None:
        return Knee(float(x[-1]), False)
    return Knee(float(x[best]), True)


def angle_sequence(counts) -> np.ndarray:
    """``theta(L) = atan(2 [N(L - 0.5) - N(L)])`` in degrees for L = 1.5..20."""
    c = np.asarray(counts, dtype=float)
    return np.degrees(np.arctan(2.0 * (c[:-1] - c[1:])))


@dataclass(frozen=True)
class AngleChoice:
    value: float
    method: str  # "angles", "elbow" or "small"


def consecutive_angles(counts, cfg: JointConfig = JointConfig(), grid=GRID) -> AngleChoice:
    """First L >= 2 whose drop equals the previous one and is below ``gamma``; returns L - 0.5.

    Falls back to the elbow when nothing matches or the match exceeds the
    largest reasonable value, and to the small threshold when there is no
    elbow either.
    """
    c = np.asarray(counts, dtype=np.int64)
    drops = c[:-1] - c[1:]  # drops[i] belongs to grid[i + 1]
    for i in range(1, drops.size):
        # equal angles mean equal integer drops
        if drops[i] == drops[i - 1] and drops[i] < cfg.gamma:
            lam = float(grid[i + 1]) - 0.5
            if lam <= cfg.lambda_max_reasonable:
                return AngleChoice(lam, "angles")
            break
    knee = kneedle_elbow(c, grid, cfg.kneedle_sensitivity)
    if knee.found:
        return AngleChoice(knee.value, "elbow")
    return AngleChoice(cfg.lambda_small, "small")


def _elbow_parts(counts, elbow: float, grid):
    c = np.asarray(counts, dtype=float)
    g = np.asarray(grid, dtype=float)
    i = int(np.argmin(np.abs(g - elbow)))
    return (g[i] - g[0], c[i] - c[0]), (g[i] - g[-1], c[i] - c[-1])


def elbow_angle_printed(counts, elbow: float, grid=GRID) -> float:
    """``atan|dL/dN|`` summed over both segments, in degrees.

    This is 180 minus the angle at the elbow, so it is small for a gently
    sloping curve and 90 for a right-angled one.
    """
    total = 0.0
    for dl, dn in _elbow_parts(counts, elbow, grid):
        total += 90.0 if dn == 0 else math.degrees(math.atan(abs(dl / dn)))
    return total


def elbow_angle(counts, elbow: float, grid=GRID) -> float:
    """Angle in degrees at the elbow between the segments to L = 1 and L = 20.

    Measured between the two segment vectors in plot units: 180 for a flat
    curve, 90 for a right-angled elbow, close to 180 again when the curve
    falls steeply on both sides. An elbow on an end point gives 180.
    """
    (dl1, dn1), (dl2, dn2) = _elbow_parts(counts, elbow, grid)
    if dl1 == 0 or dl2 == 0:
        return 180.0
    a = math.atan2(-dn1, -dl1)  # towards L = 1
    b = math.atan2(-dn2, -dl2)  # towards L = 20
    ang = abs(math.degrees(a - b)) % 360.0
    return 360.0 - ang if ang > 180.0 else ang


# ---------------------------------------------------------------- detection


@dataclass
class JointOutcome:
    rows: np.ndarray
    threshold: float
    method: str
    elbow: float | None
    elbow_found: bool
    angle: float | None
    curve: MisclassCurve
    notes: list[str] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "method": self.method,
            "elbow": self.elbow,
            "elbow_found": self.elbow_found,
            "elbow_angle": self.angle,
            "flagged": int(self.rows.size),
            "skipped_rows": self.curve.skipped.tolist(),
            "notes": self.notes,
        }


def choose_threshold(curve: MisclassCurve, levels: int, context_size: int, cfg: JointConfig):
    """Returns ``(threshold, method, knee, angle)``."""
    knee = kneedle_elbow(curve.counts, curve.grid, cfg.kneedle_sensitivity)
    angle = elbow_angle(curve.counts, knee.value, curve.grid)
    if levels == 2:
        return cfg.lambda_small, "small", knee, angle
    if angle < theta_thresh(context_size, levels):
        pick = consecutive_angles(curve.counts, cfg, curve.grid)
        return pick.value, pick.method, knee, angle
    return cfg.lambda_small, "small", knee, angle


def detect_joint(X, codes, rows, cfg: JointConfig = JointConfig()) -> JointOutcome:
    """Joint outliers for one association.

    ``X`` holds the context columns and ``codes`` the discrete column for the
    non-marginal rows whose original positions are ``rows``.
    """
    X = np.asarray(X, dtype=float)
    codes = np.asarray(codes)
    rows = np.asarray(rows, dtype=np.int64)
    levels = np.unique(codes)
    densities = [LevelDensity(X[codes == l], cfg.kde_alpha, cfg.kernel_scale) for l in levels]
    curve = classify_and_ratio(X, codes, levels, densities)
    lam, method, knee, angle = choose_threshold(curve, levels.size, X.shape[1], cfg)
    notes = []
    if curve.skipped.size:
        notes.append(f"{curve.skipped.size} row(s) skipped: every level density underflowed")
    hit = curve.flagged(lam)
    return JointOutcome(rows[hit], lam, method, knee.value, knee.found, angle, curve, notes)
