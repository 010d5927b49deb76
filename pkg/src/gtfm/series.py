"""Quarterly series containers and CSV ingestion.

Frames hold the risk parameter and the macro variables on a common quarterly
grid; scenario sets hold future macro paths keyed by scenario name.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PERIOD_RE = re.compile(r"^([0-9]{4})Q([1-4])$")
INTERCEPT = "intercept"


class SeriesError(ValueError):
    """Raised for malformed frames, scenario files and lag requests."""


@dataclass(frozen=True, order=True)
class Period:
    year: int
    quarter: int

    @classmethod
    def parse(cls, text: str) -> "Period":
        m = PERIOD_RE.match(text.strip())
        if m is None:
            raise SeriesError(f"bad period {text!r}; expected YYYYQn")
        return cls(int(m.group(1)), int(m.group(2)))

    @property
    def ordinal(self) -> int:
        return 4 * self.year + self.quarter - 1

    @classmethod
    def from_ordinal(cls, k: int) -> "Period":
        return cls(k // 4, k % 4 + 1)

    def shift(self, n: int) -> "Period":
        return Period.from_ordinal(self.ordinal + n)

    def __str__(self) -> str:
        return f"{self.year}Q{self.quarter}"


def period_range(start: Period, n: int) -> list[Period]:
    return [start.shift(i) for i in range(n)]


def _check_consecutive(periods: Sequence[Period]) -> None:
    for a, b in zip(periods, periods[1:]):
        if b.ordinal != a.ordinal + 1:
            raise SeriesError(f"non-consecutive periods: {a} followed by {b}")


def _to_float(cell: str, where: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise SeriesError(f"non-numeric cell {cell!r} at {where}") from None
    if not math.isfinite(v):
        raise SeriesError(f"missing or non-finite value at {where}")
    return v


@dataclass(frozen=True, eq=False)
class TimeSeriesFrame:
    """Aligned quarterly observations, one column per series.

    Parameters
    ----------
    start : Period
        Period of the first row.
    names : tuple of str
        Column identifiers, unique.
    values : ndarray, shape (T, k)
        Observations; T >= 2 and no missing values.
    target : str
        Name of the risk-parameter column (the ``Y`` series).
    """

    start: Period
    names: tuple
    values: np.ndarray
    target: str

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 2 or vals.shape[1] != len(self.names):
            raise SeriesError("values must be a T x k matrix matching names")
        if vals.shape[0] < 2:
            raise SeriesError("T >= 2 required")
        if len(set(self.names)) != len(self.names):
            raise SeriesError(f"duplicate series names in {self.names}")
        if self.target not in self.names:
            raise SeriesError(f"target {self.target!r} not found in {self.names}")
        if not np.all(np.isfinite(vals)):
            raise SeriesError("missing values inside the observed window")
        vals.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", vals)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def periods(self) -> list[Period]:
        return period_range(self.start, self.T)

    @property
    def end(self) -> Period:
        return self.start.shift(self.T - 1)

    @property
    def macro_names(self) -> tuple:
        return tuple(n for n in self.names if n != self.target)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise SeriesError(f"unknown series {name!r}") from None

    @property
    def y(self) -> np.ndarray:
        return self.column(self.target)

    def window(self, first: Period | None = None, last: Period | None = None) -> "TimeSeriesFrame":
        """Restrict to the inclusive period range ``[first, last]``."""
        i0 = 0 if first is None else first.ordinal - self.start.ordinal
        i1 = self.T - 1 if last is None else last.ordinal - self.start.ordinal
        if i0 < 0 or i1 >= self.T or i1 - i0 < 1:
            raise SeriesError(f"window {first}..{last} outside {self.start}..{self.end}")
        return TimeSeriesFrame(self.start.shift(i0), self.names, self.values[i0:i1 + 1], self.target)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesFrame):
            return NotImplemented
        return (
            self.start == other.start
            and self.names == other.names
            and self.target == other.target
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def load_frame(path, target: str) -> TimeSeriesFrame:
    """Read a ``period,<name1>,...`` CSV into a frame."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise SeriesError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[0] != "period":
        raise SeriesError(f"{path}: first header cell must be 'period'")
    names = header[1:]
    if not names or any(not n for n in names):
        raise SeriesError(f"{path}: missing header names")
    if len(set(names)) != len(names):
        raise SeriesError(f"{path}: duplicate header names")
    if target not in names:
        raise SeriesError(f"target {target!r} not found in {path}")
    body = rows[1:]
    if len(body) < 2:
        raise SeriesError("T >= 2 required")
    periods = [Period.parse(r[0]) for r in body]
    _check_consecutive(periods)
    values = np.empty((len(body), len(names)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise SeriesError(f"{path}: row {i + 2} has {len(r)} cells, expected {len(header)}")
        for j, cell in enumerate(r[1:]):
            values[i, j] = _to_float(cell, f"row {i + 2}, column {names[j]}")
    return TimeSeriesFrame(periods[0], tuple(names), values, target)


def write_frame(frame: TimeSeriesFrame, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", *frame.names])
        for p, row in zip(frame.periods, frame.values):
            w.writerow([str(p), *(repr(float(v)) for v in row)])


@dataclass(frozen=True)
class LagExpansion:
    base_name: str
    max_lag: int

    def __post_init__(self):
        if int(self.max_lag) != self.max_lag or self.max_lag < 0:
            raise SeriesError(f"max_lag must be a nonnegative integer, got {self.max_lag}")


def lag_name(base: str, j: int) -> str:
    return f"{base}_L{j}"


def expand_lags(frame: TimeSeriesFrame, expansions: Iterable[LagExpansion]) -> TimeSeriesFrame:
    """Add lagged copies of selected columns and prepend an intercept.

    A column expanded with ``max_lag = s >= 1`` is replaced by
    ``<name>_L0 .. <name>_Ls``; ``s = 0`` keeps the column as is.  The first
    ``max(s)`` rows are dropped from every column so the result stays
    rectangular.
    """
    exp = {e.base_name: int(e.max_lag) for e in expansions}
    for name in exp:
        if name not in frame.names:
            raise SeriesError(f"unknown series {name!r} in lag expansion")
    if INTERCEPT in frame.names:
        raise SeriesError(f"frame already has an {INTERCEPT!r} column")
    smax = max(exp.values(), default=0)
    if smax >= frame.T:
        raise SeriesError(f"lag {smax} needs more than T={frame.T} observations")
    n = frame.T - smax
    names = [INTERCEPT]
    cols = [np.ones(n)]
    for name in frame.names:
        x = frame.column(name)
        s = exp.get(name, 0)
        if s == 0:
            names.append(name)
            cols.append(x[smax:])
            continue
        for j in range(s + 1):
            names.append(lag_name(name, j))
            cols.append(x[smax - j:frame.T - j])
    return TimeSeriesFrame(frame.start.shift(smax), tuple(names), np.column_stack(cols), frame.target)


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Named future macro paths sharing a horizon and variable list."""

    start: Period
    macro_names: tuple
    scenarios: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenarios:
            raise SeriesError("scenario set is empty")
        m = len(self.macro_names)
        horizons = set()
        clean = {}
        for name, arr in self.scenarios.items():
            a = np.array(arr, dtype=float, copy=True)
            if a.ndim != 2 or a.shape[1] != m:
                raise SeriesError(f"scenario {name!r} must be H x {m}")
            if not np.all(np.isfinite(a)):
                raise SeriesError(f"scenario {name!r} has missing values")
            a.setflags(write=False)
            horizons.add(a.shape[0])
            clean[name] = a
        if len(horizons) != 1:
            raise SeriesError(f"ragged horizons across scenarios: {sorted(horizons)}")
        if horizons.pop() < 1:
            raise SeriesError("horizon H >= 1 required")
        object.__setattr__(self, "macro_names", tuple(self.macro_names))
        object.__setattr__(self, "scenarios", clean)

    @property
    def names(self) -> list[str]:
        return list(self.scenarios)

    @property
    def horizon(self) -> int:
        return next(iter(self.scenarios.values())).shape[0]

    @property
    def periods(self) -> list[Period]:
        return period_range(self.start, self.horizon)

    def path(self, scenario: str, macro: str) -> np.ndarray:
        if scenario not in self.scenarios:
            raise SeriesError(f"unknown scenario {scenario!r}")
        if macro not in self.macro_names:
            raise SeriesError(f"unknown macro column {macro!r}")
        return self.scenarios[scenario][:, self.macro_names.index(macro)]

    def __eq__(self, other):
        if not isinstance(other, ScenarioSet):
            return NotImplemented
        return (
            self.start == other.start
            and self.macro_names == other.macro_names
            and list(self.scenarios) == list(other.scenarios)
            and all(np.array_equal(self.scenarios[k], other.scenarios[k]) for k in self.scenarios)
        )

    __hash__ = None


def load_scenarios(path, macro_names: Sequence[str] | None = None) -> ScenarioSet:
    """Read a ``scenario,period,<macro1>,...`` CSV.

    When ``macro_names`` is given, every macro column must belong to it.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise SeriesError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["scenario", "period"] or len(header) < 3:
        raise SeriesError(f"{path}: header must start with 'scenario,period' plus macro columns")
    macros = header[2:]
    if len(set(macros)) != len(macros):
        raise SeriesError(f"{path}: duplicate macro columns")
    if macro_names is not None:
        unknown = [m for m in macros if m not in macro_names]
        if unknown:
            raise SeriesError(f"unknown macro column(s) {unknown}")
    by_name: dict[str, dict[Period, list[float]]] = {}
    for i, r in enumerate(rows[1:]):
        if len(r) != len(header):
            raise SeriesError(f"{path}: row {i + 2} has {len(r)} cells, expected {len(header)}")
        name, per = r[0].strip(), Period.parse(r[1])
        rows_for = by_name.setdefault(name, {})
        if per in rows_for:
            raise SeriesError(f"duplicate (scenario, period) ({name}, {per})")
        rows_for[per] = [_to_float(c, f"row {i + 2}") for c in r[2:]]
    ranges = set()
    scen = {}
    for name, rows_for in by_name.items():
        periods = sorted(rows_for)
        _check_consecutive(periods)
        ranges.add((periods[0], periods[-1]))
        scen[name] = np.array([rows_for[p] for p in periods])
    if len(ranges) != 1:
        raise SeriesError("ragged horizons: scenarios cover different period ranges")
    start = ranges.pop()[0]
    return ScenarioSet(start, tuple(macros), scen)


def write_scenarios(scenarios: ScenarioSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "period", *scenarios.macro_names])
        for name, arr in scenarios.scenarios.items():
            for p, row in zip(scenarios.periods, arr):
                w.writerow([name, str(p), *(repr(float(v)) for v in row)])


def data_path(name: str) -> Path:
    """Location of a file bundled under ``gtfm/data``."""
    return Path(__file__).parent / "data" / name
