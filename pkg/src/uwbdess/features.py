"""Feature matrices built from records, and per-column standardization."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .dataset import N_CIR, REGISTER_NAMES, CirRecord, Dataset
from .errors import ColumnMismatch, EmptySpec, NoDeliveredRecords, TooFewRows

log = logging.getLogger(__name__)

CIR_FEATURES = tuple(f"cir_abs_{k}" for k in range(N_CIR))
GAIN_FEATURE = "tx_gain_db"


@dataclass(frozen=True)
class FeatureSpec:
    use_cir_magnitudes: bool = False
    use_registers: tuple = ()
    include_tx_gain: bool = False
    standardize: bool = False

    def __post_init__(self):
        regs = tuple(self.use_registers)
        unknown = [r for r in regs if r not in REGISTER_NAMES]
        if unknown:
            raise ValueError(f"unknown register features {unknown}; choose from {REGISTER_NAMES}")
        object.__setattr__(self, "use_registers", regs)
        if not (self.use_cir_magnitudes or regs or self.include_tx_gain):
            raise EmptySpec("feature spec selects no features")

    @property
    def columns(self) -> tuple:
        cols = CIR_FEATURES if self.use_cir_magnitudes else ()
        cols += self.use_registers
        if self.include_tx_gain:
            cols += (GAIN_FEATURE,)
        return cols


FEATURE_PRESETS = {
    "fppl_only": FeatureSpec(use_registers=("fppl_db",)),
    "fppl_gain": FeatureSpec(use_registers=("fppl_db",), include_tx_gain=True),
    "cir32_gain": FeatureSpec(use_cir_magnitudes=True, include_tx_gain=True, standardize=True),
    "cir32_nogain": FeatureSpec(use_cir_magnitudes=True, standardize=True),
}


def feature_preset(name: str) -> FeatureSpec:
    try:
        return FEATURE_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown feature preset {name!r}; available: {', '.join(FEATURE_PRESETS)}") from None


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows of delivered records. ``gains`` and ``distances`` ride along even
    when the gain is not a model input, so reports can group by them."""

    X: np.ndarray
    columns: tuple
    targets: np.ndarray
    gains: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        if X.ndim != 2 or X.shape[1] != len(self.columns):
            raise ColumnMismatch(f"matrix shape {X.shape} does not fit {len(self.columns)} columns")
        y = np.array(self.targets, dtype=np.float64, copy=True)
        g = np.full(len(y), np.nan) if self.gains is None else np.array(self.gains, dtype=np.float64, copy=True)
        if len(y) != X.shape[0] or len(g) != X.shape[0]:
            raise ColumnMismatch("targets/gains length does not match row count")
        for a in (X, y, g):
            a.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "columns", tuple(self.columns))

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]

    def take(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(self.X[mask], self.columns, self.targets[mask], self.gains[mask])

    def with_values(self, X) -> "FeatureMatrix":
        return FeatureMatrix(X, self.columns, self.targets, self.gains)


def record_vector(record: CirRecord, spec: FeatureSpec) -> np.ndarray:
    """Raw (unstandardized) feature vector of one delivered record."""
    if not record.delivered:
        raise NoDeliveredRecords()
    parts = []
    if spec.use_cir_magnitudes:
        parts.append(np.abs(record.cir))
    if spec.use_registers:
        parts.append(np.array([getattr(record, name) for name in spec.use_registers], dtype=np.float64))
    if spec.include_tx_gain:
        parts.append(np.array([record.tx_gain_db]))
    return np.concatenate(parts)


def build_matrix(dataset: Dataset | Iterable[CirRecord], spec: FeatureSpec) -> FeatureMatrix:
    records = dataset.records if isinstance(dataset, Dataset) else tuple(dataset)
    rows = [r for r in records if r.delivered]
    if not rows:
        raise NoDeliveredRecords()
    if len(rows) < len(records):
        log.info("build_matrix: skipped %d undelivered records", len(records) - len(rows))
    parts = []
    if spec.use_cir_magnitudes:
        parts.append(np.abs(np.stack([r.cir for r in rows])))
    for name in spec.use_registers:
        parts.append(np.array([getattr(r, name) for r in rows], dtype=np.float64)[:, None])
    gains = np.array([r.tx_gain_db for r in rows], dtype=np.float64)
    if spec.include_tx_gain:
        parts.append(gains[:, None])
    X = np.hstack(parts)
    targets = np.array([r.true_distance_m for r in rows], dtype=np.float64)
    return FeatureMatrix(X, spec.columns, targets, gains)


@dataclass(frozen=True, eq=False)
class Standardizer:
    columns: tuple
    mean: np.ndarray
    scale: np.ndarray

    def apply_vector(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (len(self.columns),):
            raise ColumnMismatch(f"vector of shape {x.shape} does not fit {len(self.columns)} columns")
        return (x - self.mean) / self.scale

    @classmethod
    def identity(cls, columns) -> "Standardizer":
        n = len(columns)
        return cls(tuple(columns), np.zeros(n), np.ones(n))


def fit_standardizer(matrix: FeatureMatrix, exclude: Iterable[str] = (GAIN_FEATURE,)) -> Standardizer:
    """Per-column mean and population std; constant columns keep scale 1."""
    if len(matrix) < 2:
        raise TooFewRows("need at least 2 rows to fit a standardizer")
    exclude = set(exclude)
    n = matrix.n_features
    mean = np.zeros(n)
    scale = np.ones(n)
    for j, name in enumerate(matrix.columns):
        if name in exclude:
            continue
        col = matrix.X[:, j]
        if np.all(col == col[0]):
            mean[j] = col[0]
            continue
        mean[j] = col.mean()
        std = col.std()
        scale[j] = std if std > 0 else 1.0
    return Standardizer(matrix.columns, mean, scale)


def apply_standardizer(std: Standardizer, matrix: FeatureMatrix) -> FeatureMatrix:
    if tuple(std.columns) != tuple(matrix.columns):
        raise ColumnMismatch(f"standardizer columns {std.columns} != matrix columns {matrix.columns}")
    return matrix.with_values((matrix.X - std.mean) / std.scale)


def prepare(train: FeatureMatrix, spec: FeatureSpec, test: Optional[FeatureMatrix] = None):
    """Fit the feature spec's standardizer on ``train`` and apply it to both halves."""
    if spec.standardize:
        std = fit_standardizer(train) if len(train) >= 2 else Standardizer.identity(train.columns)
    else:
        std = Standardizer.identity(train.columns)
    train_t = apply_standardizer(std, train)
    test_t = apply_standardizer(std, test) if test is not None else None
    return std, train_t, test_t
