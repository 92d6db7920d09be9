"""UWB ranging records: in-memory model, CSV I/O, filtering and splitting.

A record is one transmitted packet.  Delivered packets carry 32 complex CIR
samples (first peak at index 4) plus the DW1000-style register features;
lost packets keep only their scenario fields so delivery statistics survive
a save/load cycle.
"""
from __future__ import annotations

import csv
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from .errors import (
    EmptyStratum,
    InvariantViolation,
    IoFailure,
    MalformedNumber,
    MissingColumn,
    MixedAgcState,
    NoDeliveredRecords,
)

N_CIR = 32
FIRST_PEAK_INDEX = 4
GAIN_STEP_DB = 0.5
GAIN_GRID = tuple(GAIN_STEP_DB * i for i in range(68))
MAX_GAIN_DB = GAIN_GRID[-1]

REGISTER_NAMES = (
    "fppl_db",
    "rssi_db",
    "fp_idx",
    "lde_ppampl",
    "lde_ppindx",
    "fp_ampl1",
    "fp_ampl2",
    "fp_ampl3",
)
SCENARIO_COLUMNS = ("env_id", "rx_id", "true_distance_m", "tx_gain_db", "agc_on", "delivered")
CIR_COLUMNS = tuple(f"cir_re_{k}" for k in range(N_CIR)) + tuple(f"cir_im_{k}" for k in range(N_CIR))
COLUMNS = SCENARIO_COLUMNS + REGISTER_NAMES + CIR_COLUMNS


def is_grid_gain(gain_db: float) -> bool:
    twice = gain_db * 2.0
    return 0.0 <= gain_db <= MAX_GAIN_DB and twice == math.floor(twice)


def distance_key(distance_m: float) -> int:
    """Distances are compared on a 1 mm grid."""
    return int(round(distance_m * 1000.0))


@dataclass(frozen=True, eq=False)
class CirRecord:
    env_id: str
    rx_id: int
    true_distance_m: float
    tx_gain_db: float
    agc_on: bool
    delivered: bool
    cir: Optional[np.ndarray] = None
    fppl_db: Optional[float] = None
    rssi_db: Optional[float] = None
    fp_idx: Optional[float] = None
    lde_ppampl: Optional[float] = None
    lde_ppindx: Optional[float] = None
    fp_ampl1: Optional[float] = None
    fp_ampl2: Optional[float] = None
    fp_ampl3: Optional[float] = None

    def registers(self) -> tuple:
        return tuple(getattr(self, name) for name in REGISTER_NAMES)

    def check(self) -> Optional[str]:
        """Return the first violated invariant, or None."""
        if not self.true_distance_m > 0:
            return "true_distance_m must be positive"
        if not is_grid_gain(self.tx_gain_db):
            return f"tx_gain_db {self.tx_gain_db} is not one of the 68 programmable gains"
        if not self.delivered:
            if self.cir is not None or any(v is not None for v in self.registers()):
                return "undelivered packet carries feature values"
            return None
        if self.cir is None or np.shape(self.cir) != (N_CIR,):
            return f"cir must hold exactly {N_CIR} samples"
        if any(v is None for v in self.registers()):
            return "delivered packet is missing register values"
        if min(self.fp_ampl1, self.fp_ampl2, self.fp_ampl3) < 0:
            return "fp_ampl1..3 must be non-negative"
        if self.lde_ppampl < 0:
            return "lde_ppampl must be non-negative"
        return None

    def __eq__(self, other):
        if not isinstance(other, CirRecord):
            return NotImplemented
        head = (self.env_id, self.rx_id, self.true_distance_m, self.tx_gain_db, self.agc_on,
                self.delivered) + self.registers()
        other_head = (other.env_id, other.rx_id, other.true_distance_m, other.tx_gain_db,
                      other.agc_on, other.delivered) + other.registers()
        if head != other_head:
            return False
        if self.cir is None or other.cir is None:
            return self.cir is None and other.cir is None
        return bool(np.array_equal(self.cir, other.cir))

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    records: tuple = ()
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "metadata", dict(self.metadata))
        if len({r.agc_on for r in self.records}) > 1:
            raise MixedAgcState()

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def agc_on(self) -> Optional[bool]:
        return self.records[0].agc_on if self.records else None

    @property
    def env_ids(self) -> tuple:
        return tuple(sorted({r.env_id for r in self.records}))

    def distances(self) -> list:
        """Distinct ground-truth distances, ascending."""
        seen = {}
        for r in self.records:
            seen.setdefault(distance_key(r.true_distance_m), r.true_distance_m)
        return [seen[k] for k in sorted(seen)]

    def delivered(self) -> "Dataset":
        return filter_records(self, lambda r: r.delivered)

    def validate(self):
        """Check record invariants and that each distance has a delivered packet."""
        if not self.records:
            raise InvariantViolation(None, "dataset has no records")
        for i, rec in enumerate(self.records):
            problem = rec.check()
            if problem:
                raise InvariantViolation(i + 2, problem)
        with_delivery = {distance_key(r.true_distance_m) for r in self.records if r.delivered}
        for d in self.distances():
            if distance_key(d) not in with_delivery:
                raise InvariantViolation(None, f"distance {d} m has no delivered record")


def filter_records(dataset: Dataset, predicate: Callable[[CirRecord], bool]) -> Dataset:
    return Dataset(tuple(r for r in dataset.records if predicate(r)), dataset.metadata)


def min_gain_table(dataset: Dataset) -> dict:
    """Lowest gain with at least one delivered packet, per distance."""
    if not dataset.records:
        raise NoDeliveredRecords()
    best = {}
    for r in dataset.records:
        if not r.delivered:
            continue
        key = distance_key(r.true_distance_m)
        if key not in best or r.tx_gain_db < best[key]:
            best[key] = r.tx_gain_db
    table = {}
    for d in dataset.distances():
        key = distance_key(d)
        if key not in best:
            raise NoDeliveredRecords(d)
        table[d] = best[key]
    return table


def split_train_test(dataset: Dataset, train_fraction: float, seed: int):
    """Stratified (distance x gain) split.

    Each stratum puts floor(n * train_fraction) of its delivered records in
    the training half, keeping at least one for testing when n >= 2.
    Undelivered records never enter a feature matrix and all go to the
    training half.  Both halves keep the input order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    strata = defaultdict(list)
    undelivered = []
    for i, r in enumerate(dataset.records):
        key = (distance_key(r.true_distance_m), r.tx_gain_db)
        if r.delivered:
            strata[key].append(i)
        else:
            strata.setdefault(key, [])
            undelivered.append(i)
    for (dkey, gain), members in strata.items():
        if not members:
            raise EmptyStratum(dkey / 1000.0, gain)

    rng = np.random.default_rng(seed)
    train_idx = set(undelivered)
    for key in sorted(strata):
        members = strata[key]
        n = len(members)
        n_train = math.floor(n * train_fraction)
        if n >= 2 and n_train == n:
            n_train = n - 1
        order = rng.permutation(n)
        train_idx.update(members[j] for j in order[:n_train])

    train = tuple(r for i, r in enumerate(dataset.records) if i in train_idx)
    test = tuple(r for i, r in enumerate(dataset.records) if i not in train_idx)
    return Dataset(train, dataset.metadata), Dataset(test, dataset.metadata)


def concat(datasets: Iterable[Dataset]) -> Dataset:
    records = []
    metadata = {}
    for ds in datasets:
        records.extend(ds.records)
        metadata.update(ds.metadata)
    return Dataset(tuple(records), metadata)


# --- CSV ---------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _record_row(r: CirRecord) -> list:
    row = [r.env_id, str(int(r.rx_id)), _fmt(r.true_distance_m), _fmt(r.tx_gain_db),
           "1" if r.agc_on else "0", "1" if r.delivered else "0"]
    row.extend(_fmt(v) for v in r.registers())
    if r.cir is None:
        row.extend([""] * (2 * N_CIR))
    else:
        row.extend(repr(float(v)) for v in r.cir.real)
        row.extend(repr(float(v)) for v in r.cir.imag)
    return row


def _meta_path(path) -> str:
    return os.fspath(path) + ".meta.json"


def save_csv(dataset: Dataset, path) -> None:
    """Write the canonical CSV; non-empty metadata goes to a ``.meta.json`` sidecar."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(COLUMNS)
            for r in dataset.records:
                writer.writerow(_record_row(r))
        if dataset.metadata:
            with open(_meta_path(path), "w", encoding="utf-8") as fh:
                json.dump(dict(sorted(dataset.metadata.items())), fh, indent=2)
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _parse_float(text, row, col):
    try:
        value = float(text)
    except ValueError:
        raise MalformedNumber(row, col, text) from None
    if not math.isfinite(value):
        raise MalformedNumber(row, col, text)
    return value


def _parse_bool(text, row, col):
    if text.strip() in ("0", "1"):
        return text.strip() == "1"
    raise MalformedNumber(row, col, text)


def _parse_row(values: Mapping[str, str], row: int) -> CirRecord:
    rx_text = values["rx_id"]
    try:
        rx_id = int(rx_text)
    except ValueError:
        raise MalformedNumber(row, "rx_id", rx_text) from None
    delivered = _parse_bool(values["delivered"], row, "delivered")
    kwargs = dict(
        env_id=values["env_id"],
        rx_id=rx_id,
        true_distance_m=_parse_float(values["true_distance_m"], row, "true_distance_m"),
        tx_gain_db=_parse_float(values["tx_gain_db"], row, "tx_gain_db"),
        agc_on=_parse_bool(values["agc_on"], row, "agc_on"),
        delivered=delivered,
    )
    feature_cols = REGISTER_NAMES + CIR_COLUMNS
    if not delivered:
        if any(values[c].strip() for c in feature_cols):
            raise InvariantViolation(row, "undelivered packet carries feature values")
        return CirRecord(**kwargs)
    for name in REGISTER_NAMES:
        kwargs[name] = _parse_float(values[name], row, name)
    re = [_parse_float(values[f"cir_re_{k}"], row, f"cir_re_{k}") for k in range(N_CIR)]
    im = [_parse_float(values[f"cir_im_{k}"], row, f"cir_im_{k}") for k in range(N_CIR)]
    cir = np.array(re, dtype=np.float64) + 1j * np.array(im, dtype=np.float64)
    return CirRecord(cir=cir, **kwargs)


def load_column_map(path) -> dict:
    """Read a ``{"their_col": "our_col"}`` JSON mapping file."""
    with open(path, encoding="utf-8") as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict) or not all(isinstance(k, str) and isinstance(v, str)
                                                 for k, v in mapping.items()):
        raise ValueError(f"{path}: column map must be a JSON object of strings")
    return mapping


def load_csv(path, column_map: Optional[Mapping[str, str]] = None) -> Dataset:
    """Read a canonical (or mapped foreign) CSV and validate it.

    Row numbers in errors are file line numbers (the header is line 1).
    """
    column_map = dict(column_map or {})
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(COLUMNS[0]) from None
        header = [column_map.get(h, h) for h in header]
        for col in COLUMNS:
            if col not in header:
                raise MissingColumn(col)
        pos = {name: i for i, name in enumerate(header)}
        records = []
        agc_states = set()
        for line_no, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) < len(header):
                raw = raw + [""] * (len(header) - len(raw))
            values = {col: raw[pos[col]] for col in COLUMNS}
            rec = _parse_row(values, line_no)
            problem = rec.check()
            if problem:
                raise InvariantViolation(line_no, problem)
            agc_states.add(rec.agc_on)
            if len(agc_states) > 1:
                raise MixedAgcState()
            records.append(rec)

    metadata = {}
    if os.path.exists(_meta_path(path)):
        with open(_meta_path(path), encoding="utf-8") as mfh:
            metadata = {str(k): str(v) for k, v in json.load(mfh).items()}
    ds = Dataset(tuple(records), metadata)
    ds.validate()
    return ds


def with_env(dataset: Dataset, env_id: str) -> Dataset:
    """Relabel every record with ``env_id``."""
    return Dataset(tuple(replace(r, env_id=env_id) for r in dataset.records), dataset.metadata)
