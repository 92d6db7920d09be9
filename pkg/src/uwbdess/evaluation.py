"""Error metrics, cross-environment transfer and leave-one-distance-out CV.

The headline number is the *averaged* MAE: MAE per ground-truth distance,
then an unweighted mean over distances, so distances with more packets do
not dominate.  Means are correctly rounded (exact rational sums), so
repeating every sample of a distance any number of times leaves the averaged
MAE bit-identical.
"""
from __future__ import annotations

import csv
import io
import json
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .dataset import MAX_GAIN_DB, Dataset, distance_key, filter_records, split_train_test
from .errors import EmptyTestSet, TooFewDistances
from .features import FeatureMatrix, FeatureSpec, apply_standardizer, build_matrix, prepare, record_vector
from .regressors import Regressor, make_regressor


@dataclass(frozen=True)
class EvalReport:
    per_distance_mae: Mapping[float, float]
    averaged_mae: float
    overall_mae: float
    rmse: float
    per_gain_mae: Mapping[float, float] = field(default_factory=dict)
    n_test: int = 0

    def to_dict(self) -> dict:
        return {
            "averaged_mae": self.averaged_mae,
            "overall_mae": self.overall_mae,
            "rmse": self.rmse,
            "n_test": self.n_test,
            "per_distance_mae": {repr(float(d)): v for d, v in self.per_distance_mae.items()},
            "per_gain_mae": {repr(float(g)): v for g, v in self.per_gain_mae.items()},
        }


def exact_mean(values) -> float:
    """Correctly rounded mean: the sum is taken over exact rationals."""
    values = list(values)
    return float(sum(map(Fraction, values), Fraction(0)) / len(values))


def report_from_predictions(targets, predictions, gains=None) -> EvalReport:
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if targets.size == 0:
        raise EmptyTestSet("no test rows")
    err = np.abs(predictions - targets)
    by_distance = {}
    for t, e in zip(targets.tolist(), err.tolist()):
        by_distance.setdefault(distance_key(t), (t, []))[1].append(e)
    per_distance = {by_distance[k][0]: exact_mean(by_distance[k][1]) for k in sorted(by_distance)}
    per_gain = {}
    if gains is not None:
        groups = {}
        for g, e in zip(np.asarray(gains, dtype=np.float64).tolist(), err.tolist()):
            if not math.isnan(g):
                groups.setdefault(g, []).append(e)
        per_gain = {g: exact_mean(groups[g]) for g in sorted(groups)}
    return EvalReport(
        per_distance_mae=per_distance,
        averaged_mae=exact_mean(per_distance.values()),
        overall_mae=exact_mean(err.tolist()),
        rmse=math.sqrt(exact_mean((err * err).tolist())),
        per_gain_mae=per_gain,
        n_test=int(targets.size),
    )


def evaluate(model: Regressor, test: FeatureMatrix) -> EvalReport:
    if len(test) == 0:
        raise EmptyTestSet("no test rows")
    return report_from_predictions(test.targets, model.predict_many(test.X), test.gains)


@dataclass
class Pipeline:
    """Standardizer plus trained model for one feature spec."""

    spec: FeatureSpec
    standardizer: object
    model: Regressor

    def transform(self, raw: FeatureMatrix) -> FeatureMatrix:
        return apply_standardizer(self.standardizer, raw)

    def predict_record(self, record) -> float:
        return self.model.predict(self.standardizer.apply_vector(record_vector(record, self.spec)))

    def evaluate(self, dataset: Dataset) -> EvalReport:
        return evaluate(self.model, self.transform(build_matrix(dataset, self.spec)))


def fit_pipeline(train: Dataset | FeatureMatrix, spec: FeatureSpec, model="knn") -> Pipeline:
    raw = train if isinstance(train, FeatureMatrix) else build_matrix(train, spec)
    std, train_t, _ = prepare(raw, spec)
    return Pipeline(spec, std, make_regressor(model).train(train_t))


def split_evaluate(dataset: Dataset, spec: FeatureSpec, model="knn", train_fraction=0.75, seed=0) -> EvalReport:
    """Stratified split of the delivered records, train, evaluate on the rest."""
    train, test = split_train_test(dataset.delivered(), train_fraction, seed)
    return fit_pipeline(train, spec, model).evaluate(test)


@dataclass(frozen=True)
class TransferMatrix:
    cells: Mapping[tuple, EvalReport]

    @property
    def envs(self) -> tuple:
        return tuple(sorted({a for a, _ in self.cells}))

    def averaged(self, train_env, test_env) -> float:
        return self.cells[(train_env, test_env)].averaged_mae

    def to_dict(self) -> dict:
        return {"envs": list(self.envs),
                "cells": [{"train_env": a, "test_env": b, **rep.to_dict()}
                          for (a, b), rep in sorted(self.cells.items())]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["train_env", "test_env", "distance_m", "mae_m"])
        for (a, b), rep in sorted(self.cells.items()):
            for d, mae in rep.per_distance_mae.items():
                w.writerow([a, b, repr(float(d)), repr(float(mae))])
        return buf.getvalue()

    def table(self, title="averaged MAE [m]") -> str:
        envs = self.envs
        width = max(12, *(len(e) + 2 for e in envs))
        lines = [title, "train \\ test".ljust(width) + "".join(e.rjust(width) for e in envs)]
        for a in envs:
            lines.append(a.ljust(width) + "".join(f"{self.averaged(a, b):{width}.3f}" for b in envs))
        return "\n".join(lines)


def transfer_study(train_sets: Mapping[str, Dataset], test_sets: Optional[Mapping[str, Dataset]],
                   spec: FeatureSpec, model="knn", train_fraction=0.75, seed=0) -> TransferMatrix:
    """Train in each environment, test in each environment.

    Same-environment cells use a stratified split of that environment's
    training data; cross-environment cells train on all of it and test on all
    of the other environment's data.
    """
    test_sets = train_sets if test_sets is None else test_sets
    envs = sorted(train_sets)
    if len(envs) < 2 or sorted(test_sets) != envs:
        raise ValueError("transfer study needs the same >= 2 environments in train and test sets")
    cells = {}
    for a in envs:
        train_a, held_out = split_train_test(train_sets[a].delivered(), train_fraction, seed)
        split_pipe = fit_pipeline(train_a, spec, model)
        full_pipe = fit_pipeline(train_sets[a], spec, model)
        for b in envs:
            if a == b:
                cells[(a, b)] = split_pipe.evaluate(held_out)
            else:
                cells[(a, b)] = full_pipe.evaluate(test_sets[b])
    return TransferMatrix(cells)


GAIN_POLICIES = ("max_gain", "all_gains")


def agc_study(datasets: Mapping[str, Dataset], spec: FeatureSpec, model="knn",
              train_fraction=0.75, seed=0, max_gain_db: float = MAX_GAIN_DB) -> dict:
    """Split-evaluate each dataset at the maximum gain only and over all gains.

    ``datasets`` maps an AGC label ("on"/"off") to its dataset; the result is
    keyed by ``(label, gain_policy)``.
    """
    cells = {}
    for label in sorted(datasets):
        ds = datasets[label]
        top = filter_records(ds, lambda r: r.tx_gain_db == max_gain_db)
        cells[(label, "max_gain")] = split_evaluate(top, spec, model, train_fraction, seed)
        cells[(label, "all_gains")] = split_evaluate(ds, spec, model, train_fraction, seed)
    return cells


def loo_distance_cv(dataset: Dataset, spec: FeatureSpec, model="knn") -> EvalReport:
    """Leave-one-distance-out CV: each fold tests a distance unseen in training."""
    raw = build_matrix(dataset, spec)
    keys = np.array([distance_key(t) for t in raw.targets])
    distinct = sorted(set(keys.tolist()))
    if len(distinct) < 3:
        raise TooFewDistances(f"need >= 3 distances, got {len(distinct)}")
    per_distance = {}
    targets, preds, gains = [], [], []
    for key in distinct:
        test_mask = keys == key
        train = raw.take(~test_mask)
        test = raw.take(test_mask)
        if np.any(keys[~test_mask] == key):
            raise AssertionError("fold leaks its test distance into training")
        std, train_t, test_t = prepare(train, spec, test)
        p = make_regressor(model).train(train_t).predict_many(test_t.X)
        fold = report_from_predictions(test.targets, p)
        per_distance.update(fold.per_distance_mae)
        targets.append(test.targets)
        preds.append(p)
        gains.append(test.gains)
    pooled = report_from_predictions(np.concatenate(targets), np.concatenate(preds), np.concatenate(gains))
    return EvalReport(
        per_distance_mae=per_distance,
        averaged_mae=exact_mean(per_distance.values()),
        overall_mae=pooled.overall_mae,
        rmse=pooled.rmse,
        per_gain_mae=pooled.per_gain_mae,
        n_test=pooled.n_test,
    )


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
