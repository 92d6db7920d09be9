import math

import numpy as np
import pytest

from uwbdess.channel_sim import ScenarioConfig, preset, simulate
from uwbdess.dataset import CirRecord, Dataset


def brute_force_knn(train_X, train_y, query, k, weighting):
    """Plain-Python nearest neighbours: exhaustive scan, ties to the lower row."""
    dists = []
    for i, row in enumerate(train_X):
        total = 0.0
        for a, b in zip(query, row):
            diff = a - b
            total += diff * diff
        dists.append((math.sqrt(total), i))
    dists.sort()
    nearest = dists[:k]
    zero = [train_y[i] for d, i in nearest if d == 0.0]
    if zero:
        s = 0.0
        for v in zero:
            s += v
        return s / len(zero)
    num = den = 0.0
    for d, i in nearest:
        w = 1.0 if weighting == "uniform" else 1.0 / d
        num += w * train_y[i]
        den += w
    return num / den


def record(distance, gain, delivered=True, cir=None, env="lab", agc=False, **regs):
    if not delivered:
        return CirRecord(env, 0, distance, gain, agc, False)
    if cir is None:
        cir = np.zeros(32, dtype=complex)
        cir[4] = 1.0
    defaults = dict(fppl_db=0.0, rssi_db=0.0, fp_idx=4.0, lde_ppampl=1.0, lde_ppindx=4.0,
                    fp_ampl1=1.0, fp_ampl2=0.0, fp_ampl3=0.0)
    defaults.update(regs)
    return CirRecord(env, 0, distance, gain, agc, True, np.asarray(cir, dtype=complex), **defaults)


@pytest.fixture(scope="session")
def small_scenario():
    return ScenarioConfig(packets_per_cell=4, seed=3)


@pytest.fixture(scope="session")
def hallway_off_small(small_scenario):
    return simulate(*preset("hallway_agc_off"), small_scenario)


@pytest.fixture(scope="session")
def hallway_off_full():
    return simulate(*preset("hallway_agc_off"), ScenarioConfig(seed=1))


@pytest.fixture
def lab_dataset():
    recs = [record(0.5, 12.0, fppl_db=-3.0), record(0.5, 20.0, fppl_db=-1.0),
            record(1.0, 20.0, fppl_db=-7.0), record(1.0, 5.0, delivered=False)]
    return Dataset(tuple(recs), {"source": "hand"})
