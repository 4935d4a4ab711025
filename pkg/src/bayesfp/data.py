"""Dataset ingestion, validation, categorical encoding and train/test splits."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .transforms import required_shift

FAMILIES = ("gaussian", "bernoulli", "timetoevent")
COLUMN_KINDS = ("continuous", "binary", "categorical")


class DataError(ValueError):
    """Raised for malformed input files or inconsistent datasets."""


@dataclass(frozen=True)
class Column:
    """One predictor column of the design.

    ``kind`` is ``continuous``, ``binary`` or ``categorical-level`` (an
    indicator produced by expanding a categorical variable). ``group`` names
    the source variable, so ``x4a`` and ``x4b`` both belong to ``x4``.
    ``shift`` is the positivity shift applied before any FP transform.
    """

    name: str
    values: np.ndarray
    kind: str = "continuous"
    group: str = ""
    shift: float = 0.0

    @property
    def admits_transforms(self) -> bool:
        return self.kind == "continuous"

    @property
    def minimum(self) -> float:
        return float(np.min(self.values))


@dataclass(frozen=True)
class ResponseSpec:
    kind: str
    y: np.ndarray
    status: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise DataError(f"unknown response kind {self.kind!r}; expected one of {FAMILIES}")
        y = np.asarray(self.y, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise DataError("response contains non-finite values")
        if self.kind == "bernoulli" and not np.all((y == 0) | (y == 1)):
            raise DataError("bernoulli response must be coded 0/1")
        if self.kind == "timetoevent":
            if self.status is None:
                raise DataError("time-to-event response requires a status vector")
            status = np.asarray(self.status, dtype=np.float64)
            if status.shape != y.shape:
                raise DataError("status and time vectors differ in length")
            if not np.all((status == 0) | (status == 1)):
                raise DataError("status must be coded 0/1 (1 = event observed)")
            if np.any(y <= 0):
                raise DataError("event times must be strictly positive")
            object.__setattr__(self, "status", status)
        object.__setattr__(self, "y", y)

    def take(self, idx: np.ndarray) -> "ResponseSpec":
        status = None if self.status is None else self.status[idx]
        return ResponseSpec(self.kind, self.y[idx], status)


@dataclass(frozen=True)
class Dataset:
    """Immutable design columns plus response."""

    columns: Tuple[Column, ...]
    response: ResponseSpec
    _index: Dict[str, int] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.response.y)
        if n < 2:
            raise DataError("a dataset needs at least two rows")
        for col in self.columns:
            if len(col.values) != n:
                raise DataError(f"column {col.name!r} has {len(col.values)} rows, expected {n}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        object.__setattr__(self, "_index", {c.name: i for i, c in enumerate(self.columns)})

    @property
    def n(self) -> int:
        return len(self.response.y)

    @property
    def family(self) -> str:
        return self.response.kind

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        try:
            return self.columns[self._index[name]]
        except KeyError:
            raise DataError(f"dataset has no column {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    @property
    def shifts(self) -> Dict[str, float]:
        return {c.name: c.shift for c in self.columns}

    def with_shifts(self, shifts: Mapping[str, float]) -> "Dataset":
        """Return a copy whose column shifts are taken from ``shifts``.

        Used to push a training set's positivity shifts onto new data so
        prediction applies the identical feature map.
        """
        cols = tuple(replace(c, shift=float(shifts.get(c.name, c.shift))) for c in self.columns)
        return Dataset(cols, self.response)

    def take(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        cols = tuple(replace(c, values=c.values[idx]) for c in self.columns)
        return Dataset(cols, self.response.take(idx))


def from_arrays(
    X: Mapping[str, Sequence[float]],
    y: Sequence[float],
    family: str = "gaussian",
    status: Optional[Sequence[float]] = None,
    kinds: Optional[Mapping[str, str]] = None,
) -> Dataset:
    """Build a dataset from in-memory arrays (no categorical expansion)."""
    kinds = dict(kinds or {})
    cols = []
    for name, values in X.items():
        v = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise DataError(f"column {name!r} contains non-finite values")
        kind = kinds.get(name, "continuous")
        if kind == "binary" and not np.all((v == 0) | (v == 1)):
            raise DataError(f"column {name!r} declared binary but holds other values")
        shift = required_shift(v) if kind == "continuous" else 0.0
        cols.append(Column(name, v, kind, name, shift))
    return Dataset(tuple(cols), ResponseSpec(family, np.asarray(y, dtype=np.float64), status))


# ---------------------------------------------------------------------------
# CSV input / output
# ---------------------------------------------------------------------------

SchemaEntry = Union[str, Mapping[str, object]]


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric entry {text!r} in column {column!r} (line {line})") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite entry {text!r} in column {column!r} (line {line})")
    return value


def _level_key(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def load_csv(
    path: str,
    schema: Mapping[str, SchemaEntry],
    response: Optional[str],
    family: str = "gaussian",
    status: Optional[str] = None,
) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`.

    ``schema`` maps predictor names to a kind (``continuous``, ``binary``,
    ``categorical``) or to a dict with ``kind`` and, for categoricals,
    optional ``levels`` (first one is the baseline) and ``names`` for the
    non-baseline indicators. Without ``levels`` the baseline is the first
    level met in file order. Indicators default to ``<name>_<level>``.
    ``response=None`` reads predictors only and attaches a zero Gaussian
    response, for designs whose outcome is simulated later.
    """
    if family not in FAMILIES:
        raise DataError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    pos = {h: i for i, h in enumerate(header)}
    if response is None and family != "gaussian":
        raise DataError("a predictors-only file must use the gaussian placeholder family")
    wanted = list(schema) + ([response] if response else []) + ([status] if status else [])
    for name in wanted:
        if name not in pos:
            raise DataError(f"column {name!r} not found in {path}")
    if family == "timetoevent" and not status:
        raise DataError("time-to-event data needs a status column")
    for k, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"line {k + 2} has {len(r)} fields, header has {len(header)}")

    def raw(name):
        i = pos[name]
        return [r[i].strip() for r in rows]

    def numeric(name):
        return np.array([_parse_float(t, name, k + 2) for k, t in enumerate(raw(name))])

    columns: List[Column] = []
    for name, entry in schema.items():
        spec = {"kind": entry} if isinstance(entry, str) else dict(entry)
        kind = spec.get("kind")
        if kind not in COLUMN_KINDS:
            raise DataError(f"column {name!r}: unknown kind {kind!r}")
        if kind == "categorical":
            texts = raw(name)
            for k, t in enumerate(texts):
                if t == "" or t.upper() in ("NA", "NAN"):
                    raise DataError(f"missing value in column {name!r} (line {k + 2})")
            if "levels" in spec:
                levels = [str(v) for v in spec["levels"]]
                keyed = {_level_key(v): v for v in levels}
                texts = [keyed.get(_level_key(t), t) for t in texts]
                unknown = set(texts) - set(levels)
                if unknown:
                    raise DataError(f"column {name!r} has undeclared levels {sorted(unknown)}")
            else:
                levels = list(dict.fromkeys(texts))
            labels = spec.get("names") or [f"{name}_{lv}" for lv in levels[1:]]
            if len(labels) != len(levels) - 1:
                raise DataError(f"column {name!r}: need {len(levels) - 1} indicator names")
            arr = np.array(texts, dtype=object)
            for lv, label in zip(levels[1:], labels):
                columns.append(Column(str(label), (arr == lv).astype(np.float64),
                                      "categorical-level", name, 0.0))
            continue
        v = numeric(name)
        if kind == "binary":
            if not np.all((v == 0) | (v == 1)):
                raise DataError(f"column {name!r} declared binary but holds values other than 0/1")
            columns.append(Column(name, v, "binary", name, 0.0))
        else:
            columns.append(Column(name, v, "continuous", name, required_shift(v)))

    y = numeric(response) if response else np.zeros(len(rows))
    st = numeric(status) if status else None
    return Dataset(tuple(columns), ResponseSpec(family, y, st))


def write_csv(ds: Dataset, path: str, response: str = "y", status: str = "status") -> None:
    """Write the (already expanded) design and response; floats round-trip exactly."""
    names = ds.names + [response] + ([status] if ds.family == "timetoevent" else [])
    data = [c.values for c in ds.columns] + [ds.response.y]
    if ds.family == "timetoevent":
        data.append(ds.response.status)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*data):
            w.writerow([repr(float(v)) for v in row])


def schema_of(ds: Dataset) -> Dict[str, str]:
    """Schema that reloads a file written by :func:`write_csv`."""
    return {c.name: ("continuous" if c.kind == "continuous" else "binary") for c in ds.columns}


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _count(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + 1e-9))


def split(
    ds: Dataset,
    train_fraction: float,
    seed: int,
    stratify_on_status: bool = False,
) -> Tuple[Dataset, Dataset]:
    """Random train/test partition.

    With ``stratify_on_status`` the censored and event rows are sampled
    separately so both parts carry the same censoring proportion (up to one
    observation).
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    n = ds.n
    n_train = _count(train_fraction, n)
    if n_train < 1 or n_train >= n:
        raise DataError(f"train_fraction {train_fraction} leaves an empty partition for n={n}")
    rng = np.random.default_rng(seed)
    if stratify_on_status:
        if ds.family != "timetoevent":
            raise DataError("stratified splitting requires a time-to-event response")
        censored = np.flatnonzero(ds.response.status == 0)
        events = np.flatnonzero(ds.response.status == 1)
        n_cens = int(round(train_fraction * len(censored)))
        n_cens = min(max(n_cens, n_train - len(events)), len(censored), n_train)
        train = np.concatenate([
            rng.permutation(censored)[:n_cens],
            rng.permutation(events)[: n_train - n_cens],
        ])
    else:
        train = rng.permutation(n)[:n_train]
    train = np.sort(train)
    test = np.setdiff1d(np.arange(n), train)
    return ds.take(train), ds.take(test)
