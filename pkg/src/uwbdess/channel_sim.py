"""Synthetic UWB channel and DW1000-like receiver front end.

The channel is a log-distance path-loss law with per-packet Gaussian
shadowing on the first path, a fixed list of multipath echoes with
independent per-packet jitter, and additive complex noise.  The receiver
optionally normalizes the CIR peak with a clamped AGC and clips every sample
magnitude at ``clip_amp``.  A packet is delivered when the pre-AGC first-path
amplitude reaches ``sensitivity_amp``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dataset import (
    FIRST_PEAK_INDEX,
    GAIN_GRID,
    N_CIR,
    REGISTER_NAMES,
    CirRecord,
    Dataset,
    distance_key,
)
from .errors import AllZeroCir, ConfigError, InsufficientDistances, NonPositiveDistance

REFERENCE_AMPLITUDE = 1.0
MAX_EXCESS_DELAY_NS = N_CIR - 1 - FIRST_PEAK_INDEX


@dataclass(frozen=True)
class MultipathTap:
    excess_delay_ns: int
    relative_power_db: float
    jitter_db: float = 0.0

    def __post_init__(self):
        if not 1 <= int(self.excess_delay_ns) <= MAX_EXCESS_DELAY_NS:
            raise ConfigError(f"tap delay must lie in [1, {MAX_EXCESS_DELAY_NS}] ns, got {self.excess_delay_ns}")
        if self.relative_power_db > 0:
            raise ConfigError("tap relative power must be <= 0 dB")
        if self.jitter_db < 0:
            raise ConfigError("tap jitter must be >= 0 dB")


@dataclass(frozen=True)
class EnvironmentProfile:
    name: str
    pl_exponent: float
    pl_ref_db: float
    shadowing_sigma_db: float
    taps: tuple = ()
    noise_floor_amp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(self.taps))
        if not self.pl_exponent > 0:
            raise ConfigError("pl_exponent must be positive")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("shadowing_sigma_db must be >= 0")
        if self.noise_floor_amp < 0:
            raise ConfigError("noise_floor_amp must be >= 0")


@dataclass(frozen=True)
class ReceiverProfile:
    agc_on: bool
    agc_target_amp: float
    agc_gain_min_db: float
    agc_gain_max_db: float
    clip_amp: float
    sensitivity_amp: float

    def __post_init__(self):
        if not self.agc_target_amp > 0:
            raise ConfigError("agc_target_amp must be positive")
        if self.agc_gain_min_db > self.agc_gain_max_db:
            raise ConfigError("agc_gain_min_db must not exceed agc_gain_max_db")
        if not self.clip_amp >= self.agc_target_amp:
            raise ConfigError("clip_amp must be >= agc_target_amp")
        if not self.sensitivity_amp > 0:
            raise ConfigError("sensitivity_amp must be positive")


def _default_distances():
    return tuple(0.5 * i for i in range(1, 14))


@dataclass(frozen=True)
class ScenarioConfig:
    distances_m: tuple = field(default_factory=_default_distances)
    gains_db: tuple = GAIN_GRID
    packets_per_cell: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "distances_m", tuple(float(d) for d in self.distances_m))
        object.__setattr__(self, "gains_db", tuple(float(g) for g in self.gains_db))
        if self.packets_per_cell < 1:
            raise ConfigError("packets_per_cell must be >= 1")
        if any(d <= 0 for d in self.distances_m):
            raise ConfigError("distances must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a non-negative 64-bit integer")


class Registers(NamedTuple):
    fppl_db: float
    rssi_db: float
    fp_idx: float
    lde_ppampl: float
    lde_ppindx: float
    fp_ampl1: float
    fp_ampl2: float
    fp_ampl3: float


def first_path_amplitude(env: EnvironmentProfile, distance_m: float, gain_db: float,
                         shadow_draw_db: float = 0.0) -> float:
    if not distance_m > 0:
        raise NonPositiveDistance(f"distance must be positive, got {distance_m}")
    level_db = gain_db - env.pl_ref_db - 10.0 * env.pl_exponent * math.log10(distance_m) + shadow_draw_db
    return REFERENCE_AMPLITUDE * 10.0 ** (level_db / 20.0)


def synth_cir(env: EnvironmentProfile, rx: ReceiverProfile, distance_m: float, gain_db: float,
              rng: np.random.Generator):
    """Draw one packet's CIR.

    Returns ``(cir, pre_agc_fp_amp, agc_gain_db)``.  The random draws are
    always consumed in the same order (shadow, phases, tap jitter, noise) so
    one generator per packet fixes the packet completely.
    """
    n_taps = len(env.taps)
    shadow = rng.normal(0.0, env.shadowing_sigma_db)
    phases = rng.uniform(0.0, 2.0 * math.pi, n_taps + 1)
    jitter = rng.standard_normal(n_taps)
    noise = rng.standard_normal((2, N_CIR))

    fp_amp = first_path_amplitude(env, distance_m, gain_db, shadow)
    cir = np.zeros(N_CIR, dtype=np.complex128)
    cir[FIRST_PEAK_INDEX] = fp_amp * np.exp(1j * phases[0])
    if n_taps:
        # echoes ride on the unshadowed level and fade independently
        nominal = first_path_amplitude(env, distance_m, gain_db, 0.0)
        delays = np.fromiter((t.excess_delay_ns for t in env.taps), dtype=np.int64, count=n_taps)
        rel_db = np.fromiter((t.relative_power_db + t.jitter_db * j for t, j in zip(env.taps, jitter)),
                             dtype=np.float64, count=n_taps)
        np.add.at(cir, FIRST_PEAK_INDEX + delays, nominal * 10.0 ** (rel_db / 20.0) * np.exp(1j * phases[1:]))
    if env.noise_floor_amp > 0:
        cir += (env.noise_floor_amp / math.sqrt(2.0)) * (noise[0] + 1j * noise[1])

    agc_gain_db = 0.0
    if rx.agc_on:
        peak = float(np.max(np.abs(cir)))
        wanted = 20.0 * math.log10(rx.agc_target_amp / peak) if peak > 0 else rx.agc_gain_max_db
        agc_gain_db = min(max(wanted, rx.agc_gain_min_db), rx.agc_gain_max_db)
        cir *= 10.0 ** (agc_gain_db / 20.0)

    mag = np.abs(cir)
    over = mag > rx.clip_amp
    if over.any():
        cir[over] *= rx.clip_amp / mag[over]
    return cir, fp_amp, agc_gain_db


def extract_registers(cir, fp_calibration_db: float = 0.0, rx_calibration_db: float = 0.0) -> Registers:
    """Register-style RSS features of a 32-sample CIR.

    The leading edge is the first sample reaching half the peak magnitude.
    """
    mag = np.abs(np.asarray(cir))
    if mag.shape != (N_CIR,):
        raise ValueError(f"expected {N_CIR} CIR samples, got shape {mag.shape}")
    peak_idx = int(np.argmax(mag))
    peak = float(mag[peak_idx])
    if peak == 0.0:
        raise AllZeroCir("CIR has no energy")
    fp_idx = int(np.argmax(mag >= 0.5 * peak))
    ampl = [float(mag[fp_idx + k]) if fp_idx + k < N_CIR else 0.0 for k in range(3)]
    fppl = 10.0 * math.log10(ampl[0] ** 2 + ampl[1] ** 2 + ampl[2] ** 2) - fp_calibration_db
    rssi = 10.0 * math.log10(float(np.sum(mag * mag))) - rx_calibration_db
    return Registers(fppl, rssi, float(fp_idx), peak, float(peak_idx), ampl[0], ampl[1], ampl[2])


def packet_rng(seed: int, distance_index: int, gain_index: int, packet_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, distance_index, gain_index, packet_index])


def transmit(env: EnvironmentProfile, rx: ReceiverProfile, distance_m: float, gain_db: float,
             rng: np.random.Generator) -> CirRecord:
    """Simulate one packet and package it as a record."""
    cir, fp_amp, _ = synth_cir(env, rx, distance_m, gain_db, rng)
    common = dict(env_id=env.name, rx_id=0, true_distance_m=float(distance_m),
                  tx_gain_db=float(gain_db), agc_on=bool(rx.agc_on))
    if fp_amp < rx.sensitivity_amp:
        return CirRecord(delivered=False, **common)
    return CirRecord(delivered=True, cir=cir, **common, **extract_registers(cir)._asdict())


def simulate(env: EnvironmentProfile, rx: ReceiverProfile, scenario: ScenarioConfig) -> Dataset:
    records = []
    for di, d in enumerate(scenario.distances_m):
        for gi, g in enumerate(scenario.gains_db):
            for p in range(scenario.packets_per_cell):
                records.append(transmit(env, rx, d, g, packet_rng(scenario.seed, di, gi, p)))
    metadata = {"source": "simulated", "env": env.name, "agc_on": str(int(rx.agc_on)),
                "seed": str(scenario.seed)}
    return Dataset(tuple(records), metadata)


def ambiguity_score(dataset: Dataset, feature: str, gain_db: float) -> float:
    """1 - leave-one-out 1-NN accuracy of distance labels from one register.

    Ties in feature distance resolve to the earliest record.
    """
    if feature not in REGISTER_NAMES:
        raise KeyError(f"unknown feature {feature!r}; choose from {REGISTER_NAMES}")
    rows = [r for r in dataset.records if r.delivered and r.tx_gain_db == gain_db]
    labels = np.array([distance_key(r.true_distance_m) for r in rows])
    if len(set(labels.tolist())) < 2:
        raise InsufficientDistances(f"need >= 2 distances with delivered records at gain {gain_db} dB")
    values = np.array([getattr(r, feature) for r in rows], dtype=np.float64)
    gap = np.abs(values[:, None] - values[None, :])
    np.fill_diagonal(gap, np.inf)
    nearest = np.argmin(gap, axis=1)
    accuracy = float(np.mean(labels[nearest] == labels))
    return 1.0 - accuracy


# --- presets & config files ---------------------------------------------------

def _taps(discrete, tail_start_db, tail_slope_db, jitter_db, first_delay=3):
    """Discrete reflections plus a diffuse exponential tail on the remaining delays."""
    strong = dict(discrete)
    taps = []
    for delay in range(first_delay, MAX_EXCESS_DELAY_NS + 1):
        power = strong.get(delay, tail_start_db + tail_slope_db * delay)
        taps.append(MultipathTap(delay, power, jitter_db))
    return tuple(taps)


PL_EXPONENT = 2.0
PL_REF_DB = 30.0
SHADOWING_SIGMA_DB = 0.636
TAP_JITTER_DB = 0.5
# Empty CIR positions must stay exactly zero: after standardization a
# noise-only column turns into unit-variance clutter for nearest neighbours.
NOISE_FLOOR_AMP = 0.0

ENVIRONMENTS = {
    # narrow corridor: early side-wall echoes
    "hallway": EnvironmentProfile(
        "hallway", PL_EXPONENT, PL_REF_DB, SHADOWING_SIGMA_DB,
        _taps({3: -5.0, 7: -8.0, 12: -11.0, 18: -14.0}, -16.0, -0.3, TAP_JITTER_DB),
        NOISE_FLOOR_AMP),
    # wide hall: later reflections off furniture and far walls
    "hall": EnvironmentProfile(
        "hall", PL_EXPONENT, PL_REF_DB, SHADOWING_SIGMA_DB,
        _taps({5: -4.0, 10: -7.0, 16: -10.0, 23: -13.0}, -18.0, -0.25, TAP_JITTER_DB),
        NOISE_FLOOR_AMP),
}

# Without AGC the max-gain link closes at 6.5 m with 1.5 dB margin and
# max-gain packets clip below 1.9 m.
_SENSITIVITY_OFF = first_path_amplitude(ENVIRONMENTS["hall"], 6.5, GAIN_GRID[-1], -1.5)
_CLIP_AMP = first_path_amplitude(ENVIRONMENTS["hall"], 1.9, GAIN_GRID[-1])
_AGC_TARGET = 0.9 * _CLIP_AMP

RECEIVERS = {
    "agc_off": ReceiverProfile(False, _AGC_TARGET, -10.0, 30.0, _CLIP_AMP, _SENSITIVITY_OFF),
    # AGC extends the range: ~23.5 dB more sensitivity
    "agc_on": ReceiverProfile(True, _AGC_TARGET, -10.0, 30.0, _CLIP_AMP, _SENSITIVITY_OFF / 15.0),
}

PRESETS = {
    "hallway_agc_on": ("hallway", "agc_on"),
    "hallway_agc_off": ("hallway", "agc_off"),
    "hall_agc_off": ("hall", "agc_off"),
    "hall_agc_on": ("hall", "agc_on"),
}


def preset(name: str):
    """Return ``(env, rx)`` for a bundled preset."""
    try:
        env_name, rx_name = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
    return ENVIRONMENTS[env_name], RECEIVERS[rx_name]


def read_mapping(path) -> dict:
    path = os.fspath(path)
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _tap_from(obj) -> MultipathTap:
    if isinstance(obj, dict):
        return MultipathTap(int(obj["excess_delay_ns"]), float(obj["relative_power_db"]),
                            float(obj.get("jitter_db", 0.0)))
    return MultipathTap(int(obj[0]), float(obj[1]), float(obj[2]) if len(obj) > 2 else 0.0)


def profiles_from_mapping(cfg: dict, seed: Optional[int] = None):
    """Build ``(env, rx, scenario)`` from a config mapping.

    ``preset`` picks the starting profiles; ``env``, ``rx`` and ``scenario``
    tables override individual fields.
    """
    env, rx = preset(cfg.get("preset", "hallway_agc_off"))
    if "env" in cfg:
        over = dict(cfg["env"])
        if "taps" in over:
            over["taps"] = tuple(_tap_from(t) for t in over["taps"])
        env = replace(env, **over)
    if "rx" in cfg:
        over = dict(cfg["rx"])
        if "clip_amp" in over and over["clip_amp"] in ("inf", None):
            over["clip_amp"] = math.inf
        rx = replace(rx, **over)
    scenario = ScenarioConfig(**cfg.get("scenario", {}))
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    return env, rx, scenario


def load_config(path, seed: Optional[int] = None):
    return profiles_from_mapping(read_mapping(path), seed)


def profile_dict(env: EnvironmentProfile, rx: ReceiverProfile, scenario: Optional[ScenarioConfig] = None) -> dict:
    out = {"env": asdict(env), "rx": asdict(rx)}
    if scenario is not None:
        out["scenario"] = asdict(scenario)
    return out


def delivery_grid(env: EnvironmentProfile, rx: ReceiverProfile, distances: Sequence[float],
                  gains: Sequence[float]) -> np.ndarray:
    """Noise-free delivery indicator over a (distance, gain) grid."""
    return np.array([[first_path_amplitude(env, d, g) >= rx.sensitivity_amp for g in gains]
                     for d in distances])
