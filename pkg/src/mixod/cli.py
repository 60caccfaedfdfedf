"""Command-line front end: ``simulate``, ``detect`` and ``evaluate``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import logging
import math
import os
import secrets
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .data import MixodError, load_csv, load_schema_hint
from .evaluation import DEFAULT_GRID, TARGETS, GridSpec, run_grid, score_detection
from .pipeline import PipelineConfig, detect
from .simulate import Design, GeneratorSpec, generate

log = logging.getLogger("mixod")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2

# detect flags that map straight onto flat config keys
_DETECT_FLAGS = {
    "rho": float, "epsilon": float, "alpha_ci": float, "trees": int, "subsample": int,
    "delta": float, "alpha1": float, "alpha2": float, "gamma": int,
    "lambda_small": float, "kde_alpha": float,
}


class UsageError(Exception):
    pass


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types; NaN and infinities become ``null``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(to_jsonable(obj), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def write_manifest(out: Path, command: str, config: dict[str, Any], seed: int | None,
                   inputs: dict[str, str], outputs: list[str]) -> None:
    dump_json({
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "version": __version__,
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }, out / "manifest.json")


def _read_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise MixodError(f"{path}: config must be a flat JSON object")
    return raw


def _merge(file_cfg: dict[str, Any], args: argparse.Namespace, keys) -> dict[str, Any]:
    """Flags override the file; flag names use dashes, keys use underscores."""
    out = dict(file_cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _resolve_seed(cfg: dict[str, Any]) -> int:
    if cfg.get("seed") is None:
        cfg["seed"] = secrets.randbits(63)
    return int(cfg["seed"])


def _workers(value: int | None) -> int:
    return value if value and value > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------- simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _merge(_read_config(args.config), args,
                 ["n", "pd", "pc", "levels", "q", "qm_share", "design", "seed"])
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec = GeneratorSpec.from_dict(json.load(fh))
        if args.seed is not None:
            spec = GeneratorSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    else:
        missing = [k for k in ("n", "pd", "pc", "levels", "q") if cfg.get(k) is None]
        if missing:
            raise UsageError("missing required option(s): " + ", ".join("--" + m for m in missing))
        seed = _resolve_seed(cfg)
        levels = cfg["levels"]
        levels = [int(x) for x in str(levels).split(",")] if not isinstance(levels, list) else levels
        designs = cfg.get("design") or []
        spec = GeneratorSpec.from_share(
            int(cfg["n"]), int(cfg["pd"]), int(cfg["pc"]),
            levels[0] if len(levels) == 1 else levels,
            float(cfg["q"]), float(cfg.get("qm_share", 0.8)),
            [Design.parse(d) for d in designs], seed,
        )
    ld = generate(spec)
    out = Path(args.out)
    ld.write(out)
    write_manifest(out, "simulate", spec.to_dict(), spec.seed, {},
                   ["data.csv", "truth.csv", "spec.json", "schema.json"])
    counts = ld.label_counts()
    print(f"wrote {spec.n} rows to {out}: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


# ---------------------------------------------------------------- detect


def _write_profile(path: Path, result, schema) -> None:
    prof = result.profile
    flags = result.flags()
    names = [c.name for c in schema.discrete]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "s_d", "s_c", "unit_infrequent", "flag", *[f"c_{n}" for n in names]])
        for i in range(result.n):
            w.writerow([i, repr(float(prof.discrete_scores[i])), repr(float(prof.continuous_scores[i])),
                        int(prof.unit_infrequent[i]), flags[i],
                        *[repr(float(v)) for v in prof.contributions[i]]])


def _write_curve(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "count", "theta"])
        for r in rows:
            w.writerow([r["lambda"], r["count"], "" if r["theta"] is None else repr(r["theta"])])


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = _merge(_read_config(args.config), args, ["seed", *_DETECT_FLAGS])
    seed = _resolve_seed(cfg)
    data_path = Path(args.data)
    schema_path = Path(args.schema) if args.schema else data_path.with_name("schema.json")
    hint = load_schema_hint(schema_path) if (args.schema or schema_path.is_file()) else None
    data = load_csv(data_path, hint)
    try:
        pconf = PipelineConfig.from_flat(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise MixodError(f"bad configuration: {exc}") from exc
    result = detect(data, pconf, workers=_workers(args.workers))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["score_profile.csv", "result.json", "diagnostics.json"]
    _write_profile(out / "score_profile.csv", result, data.schema)
    dump_json(result.to_dict(data.schema), out / "result.json")
    diagnostics = dict(result.diagnostics)
    curves = diagnostics.pop("curves", {})
    dump_json(diagnostics, out / "diagnostics.json")
    for j, rows in curves.items():
        name = f"curve_{data.schema.discrete[int(j)].name}.csv"
        _write_curve(out / name, rows)
        outputs.append(name)
    write_manifest(out, "detect", pconf.to_flat(), seed,
                   {"data": str(data_path), "schema": str(schema_path) if hint is not None else ""}, outputs)
    print(f"n={result.n} marginal_discrete={len(result.marginal_discrete)} "
          f"marginal_continuous={len(result.marginal_continuous)} joint={len(result.joint)} "
          f"associations={len(result.associations)}")
    for a in result.associations:
        ctx = ",".join(data.schema.continuous[k].name for k in a.context)
        print(f"  {data.schema.discrete[a.discrete_column].name} ~ {{{ctx}}}: "
              f"lambda*={a.threshold:g} ({a.method}), {len(a.flagged)} joint")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def _read_truth(path: Path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "label" not in rows[0]:
        raise MixodError(f"{path}: expected a header with a 'label' column")
    return [r["label"] for r in rows]


def _load_grid(value: str, seeds: int | None) -> GridSpec:
    if value == "default":
        grid = DEFAULT_GRID
    else:
        with open(value, encoding="utf-8") as fh:
            raw = json.load(fh)
        grid = GridSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    if seeds is not None:
        grid = dataclasses.replace(grid, seeds=seeds)
    return grid


def cmd_evaluate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if args.grid:
        grid = _load_grid(args.grid, args.seeds)
        cfg = _read_config(args.config)
        cfg.pop("seed", None)  # each (cell, seed) pair derives its own
        pconf = PipelineConfig.from_flat(cfg)
        report = run_grid(grid, pconf, workers=_workers(args.workers))
        paths = report.write(out)
        write_manifest(out, "evaluate", {"grid": grid.to_dict(), **pconf.to_flat()}, None, {},
                       [p.name for p in paths])
        for agg in report.aggregates():
            print(f"n={agg['n']} levels={agg['levels']} q={agg['q']} share={agg['marginal_share']} "
                  f"{agg['target']}: recall={agg['mean_recall']:.3f} precision={agg['mean_precision']:.3f} "
                  f"f1={agg['mean_f1']:.3f}")
        for s in report.skipped:
            print(f"skipped n={s['n']} levels={s['levels']}: {s['reason']}")
        return EXIT_OK
    if not (args.result and args.truth):
        raise UsageError("evaluate needs --result and --truth, or --grid")
    with open(args.result, encoding="utf-8") as fh:
        result = json.load(fh)
    labels = _read_truth(Path(args.truth))
    if len(labels) != result["n"]:
        raise MixodError(f"row-count mismatch: truth has {len(labels)} rows, result has {result['n']}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "tp", "fp", "fn", "recall", "precision", "f1"])
        for target in TARGETS:
            m = score_detection(labels, result, target)
            w.writerow([target, m.tp, m.fp, m.fn, repr(m.recall), repr(m.precision), repr(m.f1)])
            print(f"{target}: recall={m.recall:.3f} precision={m.precision:.3f} f1={m.f1:.3f}")
    write_manifest(out, "evaluate", {}, None, {"result": args.result, "truth": args.truth}, ["metrics.csv"])
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixod", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--config", help="flat JSON config; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="parallel workers (default: all cores)")

    s = sub.add_parser("simulate", parents=[common], help="generate a labeled synthetic table")
    s.add_argument("--spec", help="generator spec JSON (as written next to simulated data)")
    s.add_argument("--n", type=int)
    s.add_argument("--pd", type=int)
    s.add_argument("--pc", type=int)
    s.add_argument("--levels", help="level count, or comma list per discrete column")
    s.add_argument("--q", type=float)
    s.add_argument("--qm-share", dest="qm_share", type=float)
    s.add_argument("--design", action="append", help="kind:discrete:c1,c2 (repeatable)")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("detect", parents=[common], help="flag marginal and joint outliers")
    d.add_argument("--data", required=True)
    d.add_argument("--schema", help="schema JSON (default: schema.json beside the data, if present)")
    for key, kind in _DETECT_FLAGS.items():
        d.add_argument("--" + key.replace("_", "-"), dest=key, type=kind)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", parents=[common], help="score a result or run the experiment grid")
    e.add_argument("--result")
    e.add_argument("--truth")
    e.add_argument("--grid", help="'default' or a grid JSON file")
    e.add_argument("--seeds", type=int, help="seeds per grid cell")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with code 2
    except (MixodError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
