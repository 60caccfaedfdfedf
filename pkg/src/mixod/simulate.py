"""Synthetic mixed-type data with planted marginal and joint outliers.

Base rows are zero-mean Gaussian with a random covariance; the first ``p_D``
columns are quantile-discretized. Marginal outliers get an unseen level
(``l_j + 1``) in some discrete cells or a +-15 shift in some continuous
cells. Joint outliers come from a design that ties a discrete column to a
function of some continuous columns: the column is redefined by
discretizing that function, then a few rows get a different level.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import reduce
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .data import MixedDataset, write_csv
from .discretize import quantile_discretize

INLIER = "inlier"
MARGINAL_DISCRETE = "marginal_discrete"
MARGINAL_CONTINUOUS = "marginal_continuous"
MARGINAL_COMBINED = "marginal_combined"
JOINT = "joint"
MARGINAL_LABELS = (MARGINAL_DISCRETE, MARGINAL_CONTINUOUS, MARGINAL_COMBINED)
LABELS = (INLIER, *MARGINAL_LABELS, JOINT)

SHIFT = 15.0
VARIANCE_RANGE = (0.1, 5.0)
LKJ_ETA = 5.0
DESIGNS = ("linear", "product", "quotient")


class SpecError(ValueError):
    """Invalid generator settings; ``field`` names the offending setting."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Design:
    """Association between discrete column ``discrete`` and continuous ``continuous`` (0-based)."""

    kind: str
    discrete: int
    continuous: tuple[int, ...]

    @classmethod
    def parse(cls, text: str) -> "Design":
        """Parse ``kind:j:c1,c2[,...]`` with 1-based column numbers."""
        try:
            kind, j, cols = text.split(":")
            return cls(kind, int(j) - 1, tuple(int(c) - 1 for c in cols.split(",")))
        except ValueError as exc:
            raise SpecError("design", f"cannot parse {text!r}; expected kind:j:c1,c2") from exc

    def label(self) -> str:
        return f"{self.kind}:{self.discrete + 1}:{','.join(str(c + 1) for c in self.continuous)}"

    def relation(self, columns: np.ndarray) -> np.ndarray:
        """Fold difference/product/quotient left over the context columns."""
        cols = [columns[:, k] for k in range(columns.shape[1])]
        if self.kind == "linear":
            return reduce(np.subtract, cols)
        if self.kind == "product":
            return reduce(np.multiply, cols)

        def divide(a, b):
            b = np.where(b == 0.0, np.finfo(float).tiny, b)
            return a / b

        return reduce(divide, cols)


@dataclass(frozen=True)
class GeneratorSpec:
    n: int
    p_d: int
    p_c: int
    levels: tuple[int, ...]
    q_m: float
    q_j: float
    designs: tuple[Design, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 2:
            raise SpecError("n", "need at least 2 rows")
        if self.p_d < 0 or self.p_c < 0 or self.p_d + self.p_c < 1:
            raise SpecError("pd", "need at least one column")
        if len(self.levels) != self.p_d:
            raise SpecError("levels", f"expected {self.p_d} level counts")
        if any(l < 2 for l in self.levels):
            raise SpecError("levels", "every discrete column needs >= 2 levels")
        if any(self.n < l for l in self.levels):
            raise SpecError("levels", "more levels than rows")
        if self.q_m < 0 or self.q_j < 0:
            raise SpecError("q", "fractions must be non-negative")
        if self.q > 0.5 + 1e-12:
            raise SpecError("q", f"total outlier fraction {self.q:g} exceeds 0.5")
        if self.q_j > 0 and not self.designs:
            raise SpecError("design", "joint outliers need at least one design")
        seen = set()
        for d in self.designs:
            if d.kind not in DESIGNS:
                raise SpecError("design", f"unknown design {d.kind!r}")
            if not 0 <= d.discrete < self.p_d:
                raise SpecError("design", f"discrete column {d.discrete + 1} out of range")
            if d.discrete in seen:
                raise SpecError("design", f"discrete column {d.discrete + 1} used twice")
            seen.add(d.discrete)
            if len(d.continuous) < 2 or len(set(d.continuous)) != len(d.continuous):
                raise SpecError("design", "need at least 2 distinct continuous columns")
            if any(not 0 <= c < self.p_c for c in d.continuous):
                raise SpecError("design", "continuous column out of range")

    @property
    def q(self) -> float:
        return self.q_m + self.q_j

    @classmethod
    def from_share(
        cls,
        n: int,
        p_d: int,
        p_c: int,
        levels: int | Sequence[int],
        q: float,
        marginal_share: float,
        designs: Sequence[Design] = (),
        seed: int = 0,
    ) -> "GeneratorSpec":
        if not 0.0 <= q <= 0.5:
            raise SpecError("q", f"total outlier fraction {q:g} must lie in [0, 0.5]")
        if not 0.0 <= marginal_share <= 1.0:
            raise SpecError("qm_share", "must lie in [0, 1]")
        lv = (levels,) * p_d if isinstance(levels, int) else tuple(levels)
        q_m = q * marginal_share
        return cls(n, p_d, p_c, lv, q_m, q - q_m, tuple(designs), seed)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["designs"] = [d.label() for d in self.designs]
        out["levels"] = list(self.levels)
        out["q"] = self.q
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "GeneratorSpec":
        return cls(
            n=int(raw["n"]),
            p_d=int(raw["p_d"]),
            p_c=int(raw["p_c"]),
            levels=tuple(int(l) for l in raw["levels"]),
            q_m=float(raw["q_m"]),
            q_j=float(raw["q_j"]),
            designs=tuple(Design.parse(d) for d in raw.get("designs", [])),
            seed=int(raw.get("seed", 0)),
        )


@dataclass
class LabeledDataset:
    data: MixedDataset
    truth: np.ndarray
    spec: GeneratorSpec
    info: dict[str, Any] = field(default_factory=dict)

    def label_counts(self) -> dict[str, int]:
        return {lab: int((self.truth == lab).sum()) for lab in LABELS}

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(self.data, out / "data.csv")
        with open(out / "truth.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "label"])
            w.writerows(enumerate(self.truth.tolist()))
        (out / "spec.json").write_text(json.dumps(self.spec.to_dict(), indent=2) + "\n")
        (out / "schema.json").write_text(json.dumps(self.data.schema.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------- pieces


def random_correlation(p: int, rng: np.random.Generator, eta: float = LKJ_ETA) -> np.ndarray:
    """Random correlation matrix with density proportional to ``det(R) ** (eta - 1)`` (onion method)."""
    if p == 1:
        return np.ones((1, 1))
    beta = eta + (p - 2) / 2.0
    r = 2.0 * rng.beta(beta, beta) - 1.0
    R = np.array([[1.0, r], [r, 1.0]])
    for k in range(2, p):
        beta -= 0.5
        y = rng.beta(k / 2.0, beta)
        u = rng.standard_normal(k)
        u /= np.linalg.norm(u)
        z = np.linalg.cholesky(R) @ (math.sqrt(y) * u)
        R = np.block([[R, z[:, None]], [z[None, :], np.ones((1, 1))]])
    return R


def random_covariance(p: int, seed) -> np.ndarray:
    """Positive-definite covariance with variances drawn uniformly from [0.1, 5]."""
    if p < 1:
        raise ValueError("p must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    R = random_correlation(p, rng)
    sd = np.sqrt(rng.uniform(*VARIANCE_RANGE, size=p))
    cov = R * np.outer(sd, sd)
    return (cov + cov.T) / 2.0


def inject_marginal(codes, values, levels, q_m, rng):
    """Plant marginal outliers in place; returns the per-row labels."""
    n = codes.shape[0] if codes.size else values.shape[0]
    p_d, p_c = codes.shape[1], values.shape[1]
    labels = np.full(n, INLIER, dtype=object)
    n_m = int(round(n * q_m))
    if n_m == 0:
        return labels
    rows = rng.choice(n, n_m, replace=False)
    n_disc = n_m // 2 if p_c else n_m
    if p_d == 0:
        n_disc = 0
    disc, cont = rows[:n_disc], rows[n_disc:]

    def shift(i):
        z = int(rng.integers(1, p_c + 1))
        cols = rng.choice(p_c, z, replace=False)
        values[i, cols] += SHIFT * rng.choice([-1.0, 1.0], size=z)

    for i in disc:
        z = int(rng.integers(1, p_d + 1))
        for j in rng.choice(p_d, z, replace=False):
            codes[i, j] = levels[j] + 1
        labels[i] = MARGINAL_DISCRETE
    for i in cont:
        shift(i)
        labels[i] = MARGINAL_CONTINUOUS
    if p_c and disc.size:
        k = int(rng.integers(1, disc.size + 1))
        for i in rng.choice(disc, k, replace=False):
            shift(i)
            labels[i] = MARGINAL_COMBINED
    return labels


def inject_joint(codes, values, labels, design: Design, levels, count: int, rng):
    """Redefine a discrete column through ``design`` and relabel ``count`` rows."""
    j = design.discrete
    target = np.flatnonzero((labels != MARGINAL_DISCRETE) & (labels != MARGINAL_COMBINED))
    g = design.relation(values[target][:, list(design.continuous)])
    codes[target, j] = quantile_discretize(g, levels[j]) + 1
    pool = np.flatnonzero(labels == INLIER)
    if count > pool.size:
        raise SpecError("q", "not enough inlier rows for the requested joint outliers")
    chosen = rng.choice(pool, count, replace=False) if count else np.zeros(0, dtype=np.int64)
    for i in chosen:
        others = [v for v in range(1, levels[j] + 1) if v != codes[i, j]]
        codes[i, j] = others[int(rng.integers(len(others)))]
        labels[i] = JOINT
    return chosen


def generate(spec: GeneratorSpec) -> LabeledDataset:
    """Draw one labeled dataset; bit-reproducible for a given spec."""
    base_ss, marg_ss, joint_ss = np.random.SeedSequence(int(spec.seed)).spawn(3)
    rng = np.random.default_rng(base_ss)
    p = spec.p_d + spec.p_c
    cov = random_covariance(p, rng)
    X = rng.standard_normal((spec.n, p)) @ np.linalg.cholesky(cov).T
    codes = np.zeros((spec.n, spec.p_d), dtype=np.int64)
    for j in range(spec.p_d):
        codes[:, j] = quantile_discretize(X[:, j], spec.levels[j]) + 1
    values = X[:, spec.p_d :].copy()

    labels = inject_marginal(codes, values, spec.levels, spec.q_m, np.random.default_rng(marg_ss))
    jrng = np.random.default_rng(joint_ss)
    per_design = int(math.floor(spec.n * spec.q_j / len(spec.designs))) if spec.designs else 0
    for d in spec.designs:
        inject_joint(codes, values, labels, d, spec.levels, per_design, jrng)

    names_d = [f"D{j + 1}" for j in range(spec.p_d)]
    names_c = [f"C{k + 1}" for k in range(spec.p_c)]
    data = MixedDataset.from_codes(
        {nm: codes[:, j] for j, nm in enumerate(names_d)},
        {nm: values[:, k] for k, nm in enumerate(names_c)},
        declared_levels=dict(zip(names_d, spec.levels)),
    )
    return LabeledDataset(data, labels.astype(str), spec, {"covariance": cov.tolist()})
