"""Observed functional data: curves on [0, 1] with an incompleteness mode.

Curves are ingested from long-format CSV (``id,t,y``), time-normalized with
the pooled min/max so chronological offsets between curves survive, and are
immutable afterwards. Family-specific validity of the values is checked at
fit time, not here.
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (CurveTooShort, DuplicateTimeWithinCurve, EmptyDataset, InvalidInput,
                     MissingColumn, NonFiniteInput, NonNumericCell)


class IncompletenessMode(enum.Enum):
    """Which ends of the underlying process may be unobserved."""

    COMPLETE = "complete"
    LEADING = "leading"
    TRAILING = "trailing"
    FULL = "full"

    @classmethod
    def parse(cls, name):
        try:
            return cls(name.lower())
        except ValueError:
            raise InvalidInput(f"unknown incompleteness mode {name!r}")

    @property
    def pins_start(self):
        """True when h^{-1}(t*_min) is fixed to t*_min."""
        return self in (IncompletenessMode.COMPLETE, IncompletenessMode.TRAILING)

    @property
    def pins_end(self):
        """True when h^{-1}(t*_max) is fixed to t*_max."""
        return self in (IncompletenessMode.COMPLETE, IncompletenessMode.LEADING)


@dataclass(frozen=True)
class Curve:
    """One subject's samples on its chronological time grid (normalized units)."""

    id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or times.shape != values.shape:
            raise InvalidInput(f"curve {self.id!r}: times and values must be equal-length vectors")
        if times.size < 2:
            raise CurveTooShort(self.id, times.size)
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(values)):
            raise NonFiniteInput(f"curve {self.id!r} contains non-finite entries")
        if np.any(np.diff(times) <= 0):
            raise InvalidInput(f"curve {self.id!r}: times must be strictly increasing")
        if times[0] < -1e-12 or times[-1] > 1.0 + 1e-12:
            raise InvalidInput(f"curve {self.id!r}: times outside [0, 1]")

    @property
    def n(self):
        return self.times.size

    @property
    def t_min(self):
        return float(self.times[0])

    @property
    def t_max(self):
        return float(self.times[-1])


@dataclass(frozen=True)
class FunctionalDataset:
    """A set of curves sharing the normalized domain [0, 1]."""

    curves: tuple
    mode: IncompletenessMode = IncompletenessMode.COMPLETE
    raw_domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        curves = tuple(self.curves)
        object.__setattr__(self, "curves", curves)
        if not curves:
            raise EmptyDataset("dataset has no curves")
        ids = [c.id for c in curves]
        if len(set(ids)) != len(ids):
            raise InvalidInput("curve ids must be unique")
        lo, hi = self.raw_domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise InvalidInput(f"invalid raw domain {self.raw_domain!r}")
        pooled = np.unique(np.concatenate([c.times for c in curves]))
        if pooled.size < 2:
            raise InvalidInput("observed times must span at least 2 distinct points")

    def __len__(self):
        return len(self.curves)

    def __iter__(self):
        return iter(self.curves)

    def ids(self):
        return [c.id for c in self.curves]

    def total_points(self):
        return int(sum(c.n for c in self.curves))

    def pooled(self):
        """All (t, y) pairs concatenated across curves."""
        t = np.concatenate([c.times for c in self.curves])
        y = np.concatenate([c.values for c in self.curves])
        return t, y

    def to_raw_time(self, t):
        lo, hi = self.raw_domain
        return np.asarray(t, dtype=float) * (hi - lo) + lo

    def with_mode(self, mode):
        return FunctionalDataset(self.curves, mode, self.raw_domain)

    def with_values(self, values_per_curve):
        """Same grids, replaced values (used for centering)."""
        if len(values_per_curve) != len(self.curves):
            raise InvalidInput("need one value vector per curve")
        curves = tuple(Curve(c.id, c.times, v) for c, v in zip(self.curves, values_per_curve))
        return FunctionalDataset(curves, self.mode, self.raw_domain)


def from_arrays(ids, times, values, mode=IncompletenessMode.COMPLETE, normalize=True):
    """Build a dataset from per-curve arrays, optionally normalizing pooled time to [0, 1]."""
    if not ids:
        raise EmptyDataset("no curves supplied")
    times = [np.asarray(t, dtype=float) for t in times]
    if normalize:
        pooled_min = min(t.min() for t in times)
        pooled_max = max(t.max() for t in times)
        if not pooled_min < pooled_max:
            raise InvalidInput("observed times must span at least 2 distinct points")
        span = pooled_max - pooled_min
        times = [(t - pooled_min) / span for t in times]
        raw_domain = (float(pooled_min), float(pooled_max))
    else:
        raw_domain = (0.0, 1.0)
    curves = tuple(Curve(str(i), t, np.asarray(v, dtype=float))
                   for i, t, v in zip(ids, times, values))
    return FunctionalDataset(curves, mode, raw_domain)


_REQUIRED_COLUMNS = ("id", "t", "y")


def load_csv(path, mode=IncompletenessMode.COMPLETE):
    """Read long-format ``id,t,y`` CSV into a normalized dataset.

    Rows are grouped by id and sorted by t within each curve; times are then
    affinely mapped so the pooled minimum is 0 and the pooled maximum is 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in _REQUIRED_COLUMNS:
            if col not in header:
                raise MissingColumn(col)
        by_id = {}
        for rownum, row in enumerate(reader, start=1):
            cid = row["id"]
            parsed = []
            for col in ("t", "y"):
                try:
                    parsed.append(float(row[col]))
                except (TypeError, ValueError):
                    raise NonNumericCell(rownum, col, row[col])
            by_id.setdefault(cid, []).append(parsed)

    if not by_id:
        raise EmptyDataset(f"{path}: no data rows")

    ids, raw_times, values = [], [], []
    for cid, rows in by_id.items():
        rows.sort(key=lambda r: r[0])
        t = np.array([r[0] for r in rows])
        y = np.array([r[1] for r in rows])
        dup = np.nonzero(np.diff(t) == 0)[0]
        if dup.size:
            raise DuplicateTimeWithinCurve(cid, t[dup[0]])
        if t.size < 2:
            raise CurveTooShort(cid, t.size)
        ids.append(cid)
        raw_times.append(t)
        values.append(y)

    return from_arrays(ids, raw_times, values, mode=mode, normalize=True)


def write_curves(dataset, path):
    """Write the dataset back to long-format CSV with de-normalized times."""
    if not dataset.curves:
        raise InvalidInput("refusing to write a dataset with no curves")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REQUIRED_COLUMNS)
        for c in dataset:
            raw_t = dataset.to_raw_time(c.times)
            for t, y in zip(raw_t, c.values):
                writer.writerow([c.id, f"{t:.17g}", f"{y:.17g}"])
