import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import record
from uwbdess.channel_sim import ScenarioConfig, preset, simulate
from uwbdess.dataset import Dataset, with_env
from uwbdess.errors import EmptyTestSet, TooFewDistances
from uwbdess.evaluation import (
    agc_study,
    dump_json,
    evaluate,
    fit_pipeline,
    loo_distance_cv,
    report_from_predictions,
    split_evaluate,
    transfer_study,
)
from uwbdess.features import FeatureMatrix, FeatureSpec, feature_preset
from uwbdess.regressors import make_regressor


def test_perfect_predictor():
    rep = report_from_predictions([1.0, 2.0, 2.0], [1.0, 2.0, 2.0])
    assert (rep.averaged_mae, rep.overall_mae, rep.rmse) == (0.0, 0.0, 0.0)


def test_three_error_example():
    rep = report_from_predictions([1.0, 1.0, 2.0], [1.1, 1.3, 2.2])
    assert rep.per_distance_mae[1.0] == pytest.approx(0.2)
    assert rep.per_distance_mae[2.0] == pytest.approx(0.2)
    assert rep.averaged_mae == pytest.approx(0.2)
    assert rep.overall_mae == pytest.approx(0.2)
    assert rep.rmse == pytest.approx(math.sqrt((0.01 + 0.09 + 0.04) / 3))


def test_duplicating_a_distance():
    base = report_from_predictions([1.0, 1.0, 2.0], [1.1, 1.3, 2.2])
    dup = report_from_predictions([1.0, 1.0, 1.0, 1.0, 2.0], [1.1, 1.3, 1.1, 1.3, 2.2])
    assert dup.averaged_mae == base.averaged_mae
    assert dup.per_distance_mae == base.per_distance_mae


def test_empty_test_set():
    with pytest.raises(EmptyTestSet):
        report_from_predictions([], [])


def test_per_gain_mae():
    rep = report_from_predictions([1.0, 1.0, 2.0], [1.5, 1.0, 3.0], gains=[10.0, 20.0, 10.0])
    assert rep.per_gain_mae == {10.0: 0.75, 20.0: 0.0}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.5, 1.0, 2.5, 6.0]), st.floats(-5, 5)), min_size=1, max_size=30),
       st.integers(1, 4), st.randoms())
def test_averaged_mae_ignores_sample_counts(rows, copies, rnd):
    targets = [d for d, _ in rows]
    preds = [d + e for d, e in rows]
    base = report_from_predictions(targets, preds)
    first = targets[0]
    extra = [(d, p) for d, p in zip(targets, preds) if d == first] * (copies - 1)
    grown = list(zip(targets, preds)) + extra
    rnd.shuffle(grown)
    rep = report_from_predictions([t for t, _ in grown], [p for _, p in grown])
    assert rep.averaged_mae == base.averaged_mae
    assert 0.0 <= rep.overall_mae <= max(abs(e) for _, e in rows) + 1e-12
    assert rep.rmse >= rep.overall_mae - 1e-12


def test_evaluate_and_to_dict():
    X = np.array([[0.0], [1.0], [2.0]])
    m = FeatureMatrix(X, ("fppl_db",), [1.0, 2.0, 3.0], [5.0, 5.0, 6.0])
    rep = evaluate(make_regressor({"name": "knn", "k": 1}).train(m), m)
    assert rep.averaged_mae == 0.0 and rep.n_test == 3
    d = rep.to_dict()
    assert d["per_distance_mae"] == {"1.0": 0.0, "2.0": 0.0, "3.0": 0.0}
    json.dumps(d)


def test_identical_environments_transfer(hallway_off_small):
    a = hallway_off_small.delivered()
    matrix = transfer_study({"a": a, "b": with_env(a, "b")}, None, feature_preset("cir32_gain"), seed=1)
    assert matrix.envs == ("a", "b")
    for cell in matrix.cells.values():
        assert cell.averaged_mae < 0.1
    assert matrix.averaged("a", "b") == 0.0
    assert "train_env,test_env,distance_m,mae_m" in matrix.to_csv()
    assert len(matrix.table().splitlines()) == 4


def test_transfer_needs_two_envs(hallway_off_small):
    with pytest.raises(ValueError):
        transfer_study({"a": hallway_off_small}, None, feature_preset("cir32_gain"))


def test_loo_linear_data():
    recs = [record(d, 20.0, fppl_db=-10.0 * d) for d in (1.0, 2.0, 3.0) for _ in range(2)]
    rep = loo_distance_cv(Dataset(tuple(recs)), feature_preset("fppl_only"), "ols")
    assert rep.averaged_mae < 1e-6
    assert len(rep.per_distance_mae) == 3


def test_loo_needs_three_distances():
    recs = [record(d, 20.0, fppl_db=-d) for d in (1.0, 2.0) for _ in range(2)]
    with pytest.raises(TooFewDistances):
        loo_distance_cv(Dataset(tuple(recs)), feature_preset("fppl_only"), "knn")


def test_loo_folds_and_degradation(hallway_off_small):
    ds = hallway_off_small.delivered()
    spec = feature_preset("cir32_gain")
    loo = loo_distance_cv(ds, spec, "knn")
    assert len(loo.per_distance_mae) == len(ds.distances())
    split = split_evaluate(ds, spec, "knn", 0.75, 0)
    assert loo.averaged_mae > 5 * split.averaged_mae


def test_agc_study_cells(small_scenario):
    ds = {lab: simulate(*preset(f"hallway_agc_{lab}"), small_scenario) for lab in ("on", "off")}
    cells = agc_study(ds, feature_preset("fppl_gain"), seed=2)
    assert set(cells) == {(a, p) for a in ("on", "off") for p in ("max_gain", "all_gains")}
    assert cells[("off", "max_gain")].averaged_mae < cells[("on", "max_gain")].averaged_mae


def test_pipeline_predict_record(hallway_off_small):
    ds = hallway_off_small.delivered()
    pipe = fit_pipeline(ds, feature_preset("cir32_gain"))
    r = ds.records[10]
    assert pipe.predict_record(r) == r.true_distance_m


def test_dump_json_sorted(tmp_path):
    dump_json({"b": 1, "a": [1.5]}, tmp_path / "x.json")
    assert (tmp_path / "x.json").read_text() == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'
