"""Full detection pipeline: scores, marginal sets, contexts, joint sets."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

import numpy as np

from .context import ContextConfig, identify_context
from .data import Association, DetectionConfig, DetectionResult, MixedDataset, ScoreProfile
from .forest import ForestConfig, continuous_scores, fit_forest
from .itemsets import fit_discrete, discrete_scores
from .joint import GRID, JointConfig, angle_sequence, detect_joint
from .marginal import detect_marginal

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    context: ContextConfig = field(default_factory=ContextConfig)
    joint: JointConfig = field(default_factory=JointConfig)

    @property
    def seed(self) -> int:
        return int(self.detection.seed)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(
            self,
            detection=replace(self.detection, seed=int(seed)),
            forest=replace(self.forest, seed=int(seed)),
        )

    def to_flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for part in (self.detection, self.forest, self.context, self.joint):
            out.update(asdict(part))
        return out

    @classmethod
    def from_flat(cls, raw: Mapping[str, Any]) -> "PipelineConfig":
        """Build from one flat mapping; unknown keys raise ``KeyError``.

        ``seed`` feeds both the itemset stage and the forest.
        """
        raw = dict(raw)
        parts = {}
        for name, kind in (("detection", DetectionConfig), ("forest", ForestConfig),
                           ("context", ContextConfig), ("joint", JointConfig)):
            keys = {f.name for f in fields(kind)}
            parts[name] = kind(**{k: raw[k] for k in keys if k in raw})
        known = {f.name for k in (DetectionConfig, ForestConfig, ContextConfig, JointConfig) for f in fields(k)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**parts)
        return cfg.with_seed(raw["seed"]) if "seed" in raw else cfg


@dataclass
class AssociationRun:
    """Everything recorded while handling one discrete column."""

    column: int
    association: Association | None
    context_trace: dict[str, Any]
    joint: dict[str, Any] | None = None
    curve: list[dict[str, Any]] | None = None


def curve_rows(counts) -> list[dict[str, Any]]:
    """Rows ``(lambda, N, theta)``; theta is undefined at the first grid point."""
    theta = angle_sequence(counts)
    rows = []
    for i, lam in enumerate(GRID):
        rows.append({
            "lambda": float(lam),
            "count": int(counts[i]),
            "theta": float(theta[i - 1]) if i >= 1 else None,
        })
    return rows


def _column_task(j: int, X: np.ndarray, D: np.ndarray, keep: np.ndarray, cfg: PipelineConfig) -> AssociationRun:
    codes = D[keep, j]
    Xk = X[keep]
    finding, trace = identify_context(Xk, codes, j, cfg.context)
    if finding is None:
        return AssociationRun(j, None, trace.to_dict())
    ctx = list(finding.context)
    outcome = detect_joint(Xk[:, ctx], codes, keep, cfg.joint)
    assoc = Association(
        discrete_column=j,
        context=finding.context,
        threshold=float(outcome.threshold),
        method=outcome.method,
        log_p_sum=float(finding.log_p_sum),
        flagged=tuple(int(i) for i in outcome.rows),
    )
    return AssociationRun(j, assoc, trace.to_dict(), outcome.summary(), curve_rows(outcome.curve.counts))


def detect(data: MixedDataset, config: PipelineConfig | None = None, workers: int = 1,
           joint: bool = True) -> DetectionResult:
    """Score ``data`` and return the marginal and joint index sets.

    Discrete columns are handled independently after the marginal stage;
    ``workers > 1`` runs them on a thread pool with results kept in column
    order, so output does not depend on the worker count. ``joint=False``
    stops after the marginal stage.
    """
    cfg = config or PipelineConfig()
    n = data.n
    schema = data.schema
    notes: list[str] = []
    diag: dict[str, Any] = {"config": cfg.to_flat()}

    if schema.p_d:
        model = fit_discrete(data, cfg.detection)
        s_d, contrib, unit = discrete_scores(model, data)
        diag["itemsets"] = {
            "maxlen": model.maxlen,
            "xi": model.xi,
            "variable_sets": len(model.thresholds),
            "excluded_pairs": [list(p) for p in sorted(model.excluded_pairs)],
        }
    else:
        s_d, contrib, unit = None, np.zeros((n, 0)), np.zeros(n, dtype=bool)
        notes.append("no discrete columns: discrete stage skipped")
    if schema.p_c:
        forest = fit_forest(data.continuous, cfg.forest)
        s_c = continuous_scores(forest, data.continuous)
    else:
        s_c = None
        notes.append("no continuous columns: continuous stage skipped")

    marg = detect_marginal(s_d, unit, s_c, cfg.detection)
    notes.extend(marg.notes)
    diag["marginal"] = {
        "discrete": asdict(marg.discrete_trace) if marg.discrete_trace is not None else None,
        "continuous": asdict(marg.continuous_trace) if marg.continuous_trace is not None else None,
    }

    marginal = np.union1d(marg.discrete, marg.continuous)
    keep = np.setdiff1d(np.arange(n), marginal)
    runs: list[AssociationRun] = []
    if not joint:
        notes.append("joint stage disabled")
    elif schema.p_d and schema.p_c and keep.size:
        X, D = data.continuous, data.discrete
        task = lambda j: _column_task(j, X, D, keep, cfg)  # noqa: E731
        if workers > 1 and schema.p_d > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                runs = list(pool.map(task, range(schema.p_d)))
        else:
            runs = [task(j) for j in range(schema.p_d)]
    elif schema.p_d and not schema.p_c:
        notes.append("no continuous columns: joint stage skipped")

    joint_rows = sorted({i for r in runs if r.association for i in r.association.flagged})
    diag["contexts"] = [{"discrete_column": r.column, **r.context_trace} for r in runs]
    diag["joint"] = [{"discrete_column": r.column, **r.joint} for r in runs if r.joint is not None]
    diag["curves"] = {str(r.column): r.curve for r in runs if r.curve is not None}
    notes = list(dict.fromkeys(notes))
    diag["notes"] = notes
    for note in notes:
        log.info(note)

    profile = ScoreProfile(
        discrete_scores=s_d if s_d is not None else np.zeros(n),
        continuous_scores=s_c if s_c is not None else np.zeros(n),
        contributions=contrib,
        unit_infrequent=np.asarray(unit, dtype=bool),
    )
    return DetectionResult(
        marginal_discrete=tuple(int(i) for i in marg.discrete),
        marginal_continuous=tuple(int(i) for i in marg.continuous),
        joint=tuple(joint_rows),
        associations=[r.association for r in runs if r.association is not None],
        profile=profile,
        n=n,
        diagnostics=diag,
    )
