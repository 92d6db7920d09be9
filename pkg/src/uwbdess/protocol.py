"""Two-phase minimum-power-gain ranging.

Phase 1 sends a sounding packet at a high gain and takes a coarse estimate.
Phase 2 snaps that estimate to the calibration grid, transmits at the lowest
gain known to reach the snapped distance, and re-estimates with a model
trained only on minimum-gain packets.  Low gains keep the receiver out of
saturation, which is where the high-gain estimate is ambiguous.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .channel_sim import EnvironmentProfile, ReceiverProfile, ScenarioConfig, simulate, transmit
from .dataset import MAX_GAIN_DB, Dataset, distance_key, filter_records, min_gain_table
from .errors import MissingGainCoverage, NoDeliveredRecords, SoundingLost
from .evaluation import Pipeline, exact_mean, fit_pipeline
from .features import FeatureSpec, feature_preset


@dataclass(frozen=True)
class RangingSession:
    min_gain: dict
    coarse: Pipeline
    fine: Pipeline
    gains: tuple
    fine_set: Dataset = Dataset()
    max_gain_db: float = MAX_GAIN_DB

    @property
    def grid(self) -> tuple:
        return tuple(sorted(self.min_gain))

    def snap(self, distance_m: float) -> float:
        """Nearest calibration distance; exact midpoints go to the smaller one."""
        grid = self.grid
        best = grid[0]
        for d in grid[1:]:
            if abs(d - distance_m) < abs(best - distance_m):
                best = d
        return best


@dataclass(frozen=True)
class Estimate:
    coarse_m: float
    refined_m: float
    gain_used_db: float
    transmissions: int
    refine_delivered: bool = True

    @property
    def retries(self) -> int:
        return self.transmissions - 2


# A table entry is the lowest gain at which any packet of its cell got through.
# With one packet per cell that is the same statistic the phase-2 ladder
# measures; with many packets the table picks the luckiest packet and the
# ladder lands systematically above it.
CALIBRATION_PACKETS_PER_CELL = 1


def calibration_set(env: EnvironmentProfile, rx: ReceiverProfile, seed: int,
                    packets_per_cell: int = CALIBRATION_PACKETS_PER_CELL) -> Dataset:
    return simulate(env, rx, ScenarioConfig(packets_per_cell=packets_per_cell, seed=seed))


def calibrate(train: Dataset, spec: FeatureSpec | str = "fppl_gain", model="knn",
              fine_spec: FeatureSpec | str | None = None, fine_model=None,
              max_gain_db: float = MAX_GAIN_DB) -> RangingSession:
    if train.agc_on:
        raise ValueError("calibration data must be recorded with the AGC off")
    spec = feature_preset(spec) if isinstance(spec, str) else spec
    fine_spec = spec if fine_spec is None else fine_spec
    fine_spec = feature_preset(fine_spec) if isinstance(fine_spec, str) else fine_spec
    try:
        table = min_gain_table(train)
    except NoDeliveredRecords as exc:
        raise MissingGainCoverage(str(exc)) from exc
    keyed = {distance_key(d): g for d, g in table.items()}
    delivered = train.delivered()
    fine_set = filter_records(delivered, lambda r: r.tx_gain_db == keyed[distance_key(r.true_distance_m)])
    gains = tuple(sorted({r.tx_gain_db for r in train.records}))
    return RangingSession(
        min_gain=table,
        coarse=fit_pipeline(delivered, spec, model),
        fine=fit_pipeline(fine_set, fine_spec, fine_model if fine_model is not None else model),
        gains=gains,
        fine_set=fine_set,
        max_gain_db=max_gain_db,
    )


def estimate(session: RangingSession, env: EnvironmentProfile, rx: ReceiverProfile,
             true_distance_m: float, rng: np.random.Generator) -> Estimate:
    if rx.agc_on:
        raise ValueError("the min-gain protocol needs the receiver AGC off")
    sounding = transmit(env, rx, true_distance_m, session.max_gain_db, rng)
    if not sounding.delivered:
        raise SoundingLost(f"sounding packet at {session.max_gain_db} dB lost at {true_distance_m} m")
    coarse = session.coarse.predict_record(sounding)

    start = session.min_gain[session.snap(coarse)]
    ladder = [g for g in session.gains if g >= start]
    transmissions = 1
    for gain in ladder:
        packet = transmit(env, rx, true_distance_m, gain, rng)
        transmissions += 1
        if packet.delivered:
            return Estimate(coarse, session.fine.predict_record(packet), gain, transmissions)
    return Estimate(coarse, coarse, ladder[-1] if ladder else start, transmissions, refine_delivered=False)


TRIAL_COLUMNS = ("true_distance_m", "coarse_m", "refined_m", "gain_used_db",
                 "sounding_delivered", "refine_delivered")


@dataclass
class BenchResult:
    rows: list
    refined_averaged_mae: float
    baseline_averaged_mae: float
    refined_overall_mae: float
    baseline_overall_mae: float
    n_trials: int
    n_sounding_lost: int
    retries: int

    def summary(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_sounding_lost": self.n_sounding_lost,
            "retries": self.retries,
            "refined_averaged_mae": self.refined_averaged_mae,
            "baseline_averaged_mae": self.baseline_averaged_mae,
            "refined_overall_mae": self.refined_overall_mae,
            "baseline_overall_mae": self.baseline_overall_mae,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRIAL_COLUMNS)
            for row in self.rows:
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def bench(session: RangingSession, env: EnvironmentProfile, rx: ReceiverProfile, n_trials: int,
          seed: int, distance_range=(0.5, 6.5)) -> BenchResult:
    """Run the protocol on uniformly drawn true distances.

    The baseline is the phase-1 (max-gain only) estimate of the same trial.
    Averaged MAE groups trials by the calibration distance nearest to the
    true distance.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    truths = np.random.default_rng(seed).uniform(distance_range[0], distance_range[1], n_trials)
    rows = []
    kept_truth, coarse, refined = [], [], []
    lost = retries = 0
    for t, d in enumerate(truths.tolist()):
        rng = np.random.default_rng([seed, t])
        try:
            est = estimate(session, env, rx, d, rng)
        except SoundingLost:
            lost += 1
            rows.append([d, math.nan, math.nan, math.nan, 0, 0])
            continue
        retries += est.retries
        rows.append([d, est.coarse_m, est.refined_m, est.gain_used_db, 1, int(est.refine_delivered)])
        kept_truth.append(d)
        coarse.append(est.coarse_m)
        refined.append(est.refined_m)
    if not kept_truth:
        raise SoundingLost("every sounding packet was lost")
    bins = np.array([session.snap(d) for d in kept_truth])
    # group by bin, measure error against the true distance
    ref = _binned_report(bins, np.array(kept_truth), np.array(refined))
    base = _binned_report(bins, np.array(kept_truth), np.array(coarse))
    return BenchResult(rows, ref[0], base[0], ref[1], base[1], n_trials, lost, retries)


def _binned_report(bins, truth, pred):
    groups = {}
    for b, t, p in zip(bins.tolist(), truth.tolist(), pred.tolist()):
        groups.setdefault(distance_key(b), []).append(abs(p - t))
    errors = [e for k in sorted(groups) for e in groups[k]]
    return exact_mean(exact_mean(groups[k]) for k in sorted(groups)), exact_mean(errors)
