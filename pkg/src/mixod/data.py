"""Mixed-type tables, configuration bundles and result containers.

A :class:`MixedDataset` keeps discrete cells as integer level indices (into
the per-column ``levels`` tuple) and continuous cells as float64. Both arrays
are frozen after construction so datasets can be shared freely.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

DISCRETE = "discrete"
CONTINUOUS = "continuous"
_KINDS = (DISCRETE, CONTINUOUS)


class MixodError(Exception):
    """Base class for data and pipeline errors (CLI exit code 1)."""


class IngestionError(MixodError):
    """A cell could not be read: missing, malformed or non-finite."""


class SchemaError(MixodError):
    """Column declarations are inconsistent or unusable."""


@dataclass(frozen=True)
class Column:
    """One column declaration.

    ``levels`` lists observed level codes in first-appearance order.
    ``declared_levels`` is the intended level count used for support
    thresholds; it defaults to the number of observed codes.
    """

    name: str
    kind: str
    levels: tuple[str, ...] = ()
    declared_levels: int | None = None

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    @property
    def level_count(self) -> int:
        if self.declared_levels is not None:
            return self.declared_levels
        return len(self.levels)


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]

    def __post_init__(self) -> None:
        if len(self.columns) == 0:
            raise SchemaError("a table needs at least one column")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        for col in self.columns:
            if col.kind not in _KINDS:
                raise SchemaError(f"column {col.name!r}: unknown kind {col.kind!r}")
            if not col.is_discrete:
                continue
            if len(set(col.levels)) != len(col.levels):
                raise SchemaError(f"column {col.name!r}: level codes are not unique")
            if col.level_count < 2:
                raise SchemaError(
                    f"column {col.name!r}: a discrete column needs at least 2 levels"
                )

    @property
    def discrete(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.is_discrete)

    @property
    def continuous(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if not c.is_discrete)

    @property
    def p_d(self) -> int:
        return len(self.discrete)

    @property
    def p_c(self) -> int:
        return len(self.continuous)

    @property
    def level_counts(self) -> tuple[int, ...]:
        """Declared level count of each discrete column."""
        return tuple(c.level_count for c in self.discrete)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for c in self.columns:
            if c.is_discrete:
                out[c.name] = {"kind": DISCRETE, "levels": c.level_count}
            else:
                out[c.name] = CONTINUOUS
        return out


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MixedDataset:
    """Column-typed table with ``n`` rows.

    Attributes:
        schema: Column declarations in file order.
        discrete: ``(n, p_D)`` int64 level indices into ``schema.discrete[j].levels``.
        continuous: ``(n, p_C)`` finite float64 values.
    """

    schema: Schema
    discrete: np.ndarray
    continuous: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.discrete, dtype=np.int64)
        c = np.asarray(self.continuous, dtype=np.float64)
        if d.ndim != 2 or c.ndim != 2 or d.shape[0] != c.shape[0]:
            raise SchemaError("discrete and continuous blocks must be 2-D with equal rows")
        if d.shape[1] != self.schema.p_d or c.shape[1] != self.schema.p_c:
            raise SchemaError("block widths do not match the schema")
        if d.shape[0] < 1:
            raise IngestionError("a table needs at least one row")
        for j, col in enumerate(self.schema.discrete):
            if d.shape[0] and (d[:, j].min() < 0 or d[:, j].max() >= len(col.levels)):
                raise SchemaError(f"column {col.name!r}: level index out of range")
        if not np.all(np.isfinite(c)):
            i, j = np.argwhere(~np.isfinite(c))[0]
            raise IngestionError(
                f"non-finite value in row {i}, column {self.schema.continuous[j].name!r}"
            )
        object.__setattr__(self, "discrete", _frozen(d))
        object.__setattr__(self, "continuous", _frozen(c))

    @property
    def n(self) -> int:
        return int(self.discrete.shape[0])

    @classmethod
    def from_codes(
        cls,
        discrete: Mapping[str, Sequence[Any]],
        continuous: Mapping[str, Sequence[float]],
        declared_levels: Mapping[str, int] | None = None,
        order: Sequence[str] | None = None,
    ) -> "MixedDataset":
        """Build a dataset from raw level codes and numbers.

        Level codes are converted to strings and enumerated in first-appearance
        order. ``order`` fixes the column order (defaults to discrete first).
        """
        declared_levels = dict(declared_levels or {})
        names = list(order) if order is not None else [*discrete, *continuous]
        cols: list[Column] = []
        dcols: list[np.ndarray] = []
        ccols: list[np.ndarray] = []
        for name in names:
            if name in discrete:
                codes = [str(v) for v in discrete[name]]
                levels = tuple(dict.fromkeys(codes))
                index = {lv: k for k, lv in enumerate(levels)}
                dcols.append(np.array([index[v] for v in codes], dtype=np.int64))
                cols.append(Column(name, DISCRETE, levels, declared_levels.get(name)))
            elif name in continuous:
                ccols.append(np.asarray(continuous[name], dtype=np.float64))
                cols.append(Column(name, CONTINUOUS))
            else:
                raise SchemaError(f"column {name!r} has no values")
        n = len(dcols[0]) if dcols else len(ccols[0])
        d = np.column_stack(dcols) if dcols else np.zeros((n, 0), dtype=np.int64)
        c = np.column_stack(ccols) if ccols else np.zeros((n, 0), dtype=np.float64)
        return cls(Schema(tuple(cols)), d, c)

    def discrete_codes(self) -> list[list[str]]:
        """Level codes per discrete column (column-major)."""
        return [
            [col.levels[k] for k in self.discrete[:, j]]
            for j, col in enumerate(self.schema.discrete)
        ]

    def take(self, rows: Iterable[int] | np.ndarray) -> "MixedDataset":
        """Row subset with the same schema (level tables are kept as-is)."""
        idx = np.asarray(list(rows) if not isinstance(rows, np.ndarray) else rows, dtype=np.int64)
        return MixedDataset(self.schema, self.discrete[idx], self.continuous[idx])


def split_columns(data: MixedDataset) -> tuple[np.ndarray, np.ndarray]:
    """Return read-only ``(discrete, continuous)`` views in row order."""
    return data.discrete, data.continuous


# ---------------------------------------------------------------- CSV I/O


def format_float(x: float) -> str:
    """Canonical decimal text: Python's shortest round-trip ``repr``."""
    return repr(float(x))


def load_schema_hint(path: str | Path) -> dict[str, Any]:
    """Read a sidecar JSON mapping column name to kind.

    Values are ``"discrete"``, ``"continuous"`` or
    ``{"kind": "discrete", "levels": <declared count>}``.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise SchemaError("schema file must hold a JSON object")
    return raw


def _hint_entry(hint: Mapping[str, Any] | Schema | None, name: str) -> tuple[str | None, int | None]:
    if hint is None:
        return None, None
    if isinstance(hint, Schema):
        for col in hint.columns:
            if col.name == name:
                return col.kind, col.declared_levels
        return None, None
    entry = hint.get(name)
    if entry is None:
        return None, None
    if isinstance(entry, str):
        kind, levels = entry, None
    elif isinstance(entry, Mapping):
        kind, levels = entry.get("kind"), entry.get("levels")
    else:
        raise SchemaError(f"column {name!r}: unreadable schema entry {entry!r}")
    if kind not in _KINDS:
        raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
    if levels is not None and (not isinstance(levels, int) or levels < 2):
        raise SchemaError(f"column {name!r}: declared levels must be an integer >= 2")
    return kind, levels


def _parse_float(text: str) -> float | None:
    try:
        return float(text)
    except ValueError:
        return None


def load_csv(
    path: str | Path, schema_hint: Mapping[str, Any] | Schema | None = None
) -> MixedDataset:
    """Read a UTF-8 CSV with a header row into a validated dataset.

    A column is discrete when the hint says so or when any cell fails to parse
    as a number; otherwise it is continuous.

    Raises:
        IngestionError: empty cell, ragged row, or non-finite number.
        SchemaError: duplicate names or a discrete column with one level.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"no such file: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise IngestionError(f"{path}: no data rows")
    p = len(header)
    for i, r in enumerate(body):
        if len(r) != p:
            raise IngestionError(f"row {i} (line {i + 2}): expected {p} fields, got {len(r)}")
        for j, cell in enumerate(r):
            if cell.strip() == "":
                raise IngestionError(f"missing value in row {i} (line {i + 2}), column {header[j]!r}")

    discrete: dict[str, list[str]] = {}
    continuous: dict[str, list[float]] = {}
    declared: dict[str, int] = {}
    for j, name in enumerate(header):
        cells = [r[j].strip() for r in body]
        kind, levels = _hint_entry(schema_hint, name)
        if kind is None:
            kind = CONTINUOUS if all(_parse_float(v) is not None for v in cells) else DISCRETE
        if kind == DISCRETE:
            discrete[name] = cells
            if levels is not None:
                declared[name] = levels
            if len(set(cells)) < 2 and levels is None:
                raise SchemaError(f"column {name!r} has a single level {cells[0]!r}")
            continue
        values = []
        for i, v in enumerate(cells):
            x = _parse_float(v)
            if x is None:
                raise IngestionError(f"non-numeric value {v!r} in row {i} (line {i + 2}), column {name!r}")
            if not math.isfinite(x):
                raise IngestionError(f"non-finite value {v!r} in row {i} (line {i + 2}), column {name!r}")
            values.append(x)
        continuous[name] = values
    return MixedDataset.from_codes(discrete, continuous, declared, order=header)


def write_csv(data: MixedDataset, path: str | Path) -> None:
    """Write the table in schema order with canonical number formatting."""
    codes = iter(data.discrete_codes())
    columns: list[list[str]] = []
    jc = 0
    for col in data.schema.columns:
        if col.is_discrete:
            columns.append(next(codes))
        else:
            columns.append([format_float(x) for x in data.continuous[:, jc]])
            jc += 1
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c.name for c in data.schema.columns])
        w.writerows(zip(*columns))


# ---------------------------------------------------------------- configs and results


@dataclass(frozen=True)
class DetectionConfig:
    """Marginal-stage settings.

    Attributes:
        rho: Largest believed outlier fraction.
        epsilon: Slack added to ``rho``; ``rho + epsilon`` may not exceed 0.5.
        alpha_ci: Significance of the simultaneous multinomial intervals.
        seed: Root seed for every random stream in the pipeline.
    """

    rho: float = 0.20
    epsilon: float = 0.02
    alpha_ci: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.rho <= 0.5:
            raise ValueError("rho must lie in (0, 0.5]")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")
        if self.rho + self.epsilon > 0.5 + 1e-12:
            raise ValueError("rho + epsilon must not exceed 0.5")
        if not 0.0 < self.alpha_ci < 1.0:
            raise ValueError("alpha_ci must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit non-negative integer")

    def flag_budget(self, n: int) -> int:
        """``ceil((rho + epsilon) * n)``: flagged marginal rows must stay below it."""
        return int(math.ceil(round((self.rho + self.epsilon) * n, 9)))


@dataclass(frozen=True)
class ScoreProfile:
    """Per-row scores.

    ``unit_infrequent[i]`` marks rows holding a level that is infrequent on its
    own; such rows are always treated as discrete marginal outliers.
    """

    discrete_scores: np.ndarray
    continuous_scores: np.ndarray
    contributions: np.ndarray
    unit_infrequent: np.ndarray

    @property
    def n(self) -> int:
        return int(len(self.discrete_scores))


@dataclass(frozen=True)
class Association:
    discrete_column: int
    context: tuple[int, ...]
    threshold: float
    method: str
    log_p_sum: float
    flagged: tuple[int, ...] = ()

    def to_dict(self, schema: Schema | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {
            "discrete_column": self.discrete_column,
            "context": list(self.context),
            "lambda_star": self.threshold,
            "method": self.method,
            "log_p_sum": self.log_p_sum,
            "flagged": list(self.flagged),
        }
        if schema is not None:
            out["discrete_name"] = schema.discrete[self.discrete_column].name
            out["context_names"] = [schema.continuous[k].name for k in self.context]
        return out


@dataclass
class DetectionResult:
    """Disjoint index sets of flagged rows (original row positions)."""

    marginal_discrete: tuple[int, ...]
    marginal_continuous: tuple[int, ...]
    joint: tuple[int, ...]
    associations: list[Association]
    profile: ScoreProfile
    n: int
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        marginal = set(self.marginal_discrete) | set(self.marginal_continuous)
        if set(self.marginal_discrete) & set(self.marginal_continuous):
            raise ValueError("discrete and continuous marginal sets overlap")
        if marginal & set(self.joint):
            raise ValueError("joint set overlaps the marginal sets")

    @property
    def marginal(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.marginal_discrete) | set(self.marginal_continuous)))

    def flags(self) -> list[str]:
        out = ["inlier"] * self.n
        for i in self.marginal_discrete:
            out[i] = "marg_D"
        for i in self.marginal_continuous:
            out[i] = "marg_C"
        for i in self.joint:
            out[i] = "joint"
        return out

    def to_dict(self, schema: Schema | None = None) -> dict[str, Any]:
        return {
            "n": self.n,
            "marginal_discrete": list(self.marginal_discrete),
            "marginal_continuous": list(self.marginal_continuous),
            "joint": list(self.joint),
            "associations": [a.to_dict(schema) for a in self.associations],
        }
