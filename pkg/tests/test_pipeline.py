import numpy as np
import pytest

from mixod import PipelineConfig, detect
from mixod.simulate import Design, GeneratorSpec, generate


@pytest.fixture(scope="module")
def labeled():
    spec = GeneratorSpec.from_share(800, 3, 3, 3, 0.1, 0.5, [Design("linear", 0, (0, 1))], 5)
    return generate(spec)


@pytest.fixture(scope="module")
def result(labeled):
    return detect(labeled.data, PipelineConfig().with_seed(1))


def test_sets_disjoint_and_sorted(result):
    marg = set(result.marginal)
    assert marg.isdisjoint(result.joint)
    assert list(result.joint) == sorted(result.joint)


def test_diagnostics_keys(result):
    d = result.diagnostics
    assert {"config", "itemsets", "marginal", "contexts", "joint", "curves", "notes"} <= set(d)
    assert len(d["contexts"]) == 3
    for col, rows in d["curves"].items():
        assert len(rows) == 39 and rows[0]["theta"] is None


def test_workers_do_not_change_output(labeled, result):
    other = detect(labeled.data, PipelineConfig().with_seed(1), workers=3)
    assert other.to_dict(labeled.data.schema) == result.to_dict(labeled.data.schema)


def test_finds_marginal_rows(labeled, result):
    planted = set(np.flatnonzero(np.char.startswith(labeled.truth.astype(str), "marginal")).tolist())
    assert len(planted & set(result.marginal)) >= 0.95 * len(planted)


def test_continuous_only():
    spec = GeneratorSpec.from_share(300, 0, 3, [], 0.05, 1.0, [], 2)
    res = detect(generate(spec).data)
    assert res.joint == () and res.marginal_discrete == ()
    assert any("no discrete" in n for n in res.diagnostics["notes"])


def test_discrete_only():
    spec = GeneratorSpec.from_share(300, 3, 0, 3, 0.05, 1.0, [], 2)
    res = detect(generate(spec).data)
    assert res.marginal_continuous == () and res.joint == ()
    assert any("joint stage skipped" in n for n in res.diagnostics["notes"])


def test_config_flat_roundtrip():
    cfg = PipelineConfig().with_seed(9)
    back = PipelineConfig.from_flat(cfg.to_flat())
    assert back == cfg
    with pytest.raises(KeyError):
        PipelineConfig.from_flat({"nonsense": 1})
    assert PipelineConfig.from_flat({"seed": 4}).forest.seed == 4


def test_marginal_only_matches_full(labeled, result):
    short = detect(labeled.data, PipelineConfig().with_seed(1), joint=False)
    assert short.marginal == result.marginal and short.joint == ()
    assert "joint stage disabled" in short.diagnostics["notes"]
