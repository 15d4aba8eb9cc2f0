"""Experiment designs, outcome spreadsheets, count tables and their CSV forms.

Setting labels are ``x``/``x'`` on arm A and ``y``/``y'`` on arm B.  The four
setting pairs are always ordered (x,y), (x,y'), (x',y), (x',y'), which is the
order of the CHSH sign pattern.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import InputError
from .quantum import CHSH_SIGNS

X_LABELS = ("x", "x'")
Y_LABELS = ("y", "y'")
PAIR_INDEX = ((0, 0), (0, 1), (1, 0), (1, 1))
PAIR_NAMES = tuple(X_LABELS[i] + Y_LABELS[j] for i, j in PAIR_INDEX)

PAIR_HEADER = ["trial", "setting_x", "setting_y", "a", "b"]
QUAD_HEADER = ["trial", "a", "a_prime", "b", "b_prime"]
COUNT_HEADER = ["setting_pair", "a", "b", "count"]


@dataclass(frozen=True)
class SettingPair:
    x: int
    y: int
    theta_x: float = math.nan
    theta_y: float = math.nan

    @property
    def name(self) -> str:
        return X_LABELS[self.x] + Y_LABELS[self.y]

    @property
    def index(self) -> int:
        return PAIR_INDEX.index((self.x, self.y))


@dataclass(frozen=True)
class Design:
    """Analyser angles (radians) for settings x, x' and y, y'."""

    a: float
    a_prime: float
    b: float
    b_prime: float

    def __post_init__(self):
        for v in self.angles:
            if not math.isfinite(v):
                raise InputError("design angles must be finite")

    @classmethod
    def standard(cls) -> "Design":
        return cls(0.0, math.pi / 2, math.pi / 4, 3 * math.pi / 4)

    @property
    def angles(self) -> tuple[float, float, float, float]:
        return (self.a, self.a_prime, self.b, self.b_prime)

    def theta_x(self, i: int) -> float:
        return (self.a, self.a_prime)[i]

    def theta_y(self, j: int) -> float:
        return (self.b, self.b_prime)[j]

    def pairs(self) -> tuple[SettingPair, ...]:
        return tuple(SettingPair(i, j, self.theta_x(i), self.theta_y(j)) for i, j in PAIR_INDEX)


def _pm1_array(values, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise InputError(f"{what} must be one-dimensional")
    if not np.all((arr == 1) | (arr == -1)):
        raise InputError(f"{what} entries must be +1 or -1")
    return arr.astype(np.int8)


@dataclass
class PairSheet:
    """Outcome pairs (a, b) recorded under one setting pair."""

    setting: SettingPair
    a: np.ndarray
    b: np.ndarray
    trial: np.ndarray | None = None

    def __post_init__(self):
        self.a = _pm1_array(self.a, "a")
        self.b = _pm1_array(self.b, "b")
        if len(self.a) != len(self.b):
            raise InputError("a and b columns differ in length")
        if self.trial is None:
            self.trial = np.arange(len(self.a))
        self.trial = np.asarray(self.trial, dtype=np.int64)

    @property
    def n(self) -> int:
        return len(self.a)

    def mean_ab(self) -> float:
        return float(np.mean(self.a.astype(np.int64) * self.b))

    def counts(self) -> np.ndarray:
        """2x2 counts indexed [a, b] with index 0 for +1 and 1 for -1."""
        c = np.zeros((2, 2), dtype=np.int64)
        np.add.at(c, ((self.a < 0).astype(int), (self.b < 0).astype(int)), 1)
        return c


@dataclass
class QuadrupleSheet:
    """N x 4 table of (a, a', b, b') rows."""

    a: np.ndarray
    a_prime: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray

    def __post_init__(self):
        self.a = _pm1_array(self.a, "a")
        self.a_prime = _pm1_array(self.a_prime, "a_prime")
        self.b = _pm1_array(self.b, "b")
        self.b_prime = _pm1_array(self.b_prime, "b_prime")
        if not len(self.a) == len(self.a_prime) == len(self.b) == len(self.b_prime):
            raise InputError("quadruple columns differ in length")

    @classmethod
    def from_rows(cls, rows) -> "QuadrupleSheet":
        arr = np.asarray(rows).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    @property
    def n(self) -> int:
        return len(self.a)

    def rows(self) -> np.ndarray:
        return np.column_stack([self.a, self.a_prime, self.b, self.b_prime])

    def pair_sheets(self, design: Design | None = None) -> tuple[PairSheet, ...]:
        """The four pair sheets read off this sheet's columns (same rows in each)."""
        xs = (self.a, self.a_prime)
        ys = (self.b, self.b_prime)
        pairs = design.pairs() if design else tuple(SettingPair(i, j) for i, j in PAIR_INDEX)
        return tuple(PairSheet(p, xs[p.x], ys[p.y]) for p in pairs)


@dataclass
class CountTable:
    """2x2 counts n_xy(a, b) for the four setting pairs, shape (4, 2, 2)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (4, 2, 2):
            raise InputError(f"count table must have shape (4, 2, 2), got {c.shape}")
        if np.any(c < 0) or np.any(c != np.round(c)):
            raise InputError("counts must be non-negative integers")
        self.counts = c.astype(np.int64)

    @classmethod
    def from_sheets(cls, sheets: Iterable[PairSheet]) -> "CountTable":
        c = np.zeros((4, 2, 2), dtype=np.int64)
        seen = set()
        for s in sheets:
            if s.setting.index in seen:
                raise InputError(f"duplicate setting pair {s.setting.name}")
            seen.add(s.setting.index)
            c[s.setting.index] = s.counts()
        if len(seen) != 4:
            raise InputError("need sheets for all four setting pairs")
        return cls(c)

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=(1, 2))

    def correlations(self) -> np.ndarray:
        c = self.counts
        return (c[:, 0, 0] + c[:, 1, 1] - c[:, 0, 1] - c[:, 1, 0]) / self.totals


def chsh_value(e: Iterable[float]) -> float:
    return float(sum(s * v for s, v in zip(CHSH_SIGNS, e)))


# ------------------------------------------------------------ CSV

def _open_text(source) -> TextIO:
    if isinstance(source, (str, Path)):
        return open(source, newline="")
    return source


def _data_lines(f: TextIO) -> list[str]:
    return [line for line in f if line.strip() and not line.lstrip().startswith("#")]


def _read_rows(source, header: list[str]) -> list[dict]:
    f = _open_text(source)
    try:
        reader = csv.DictReader(_data_lines(f))
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != header:
            raise InputError(f"expected CSV header {','.join(header)}, got {reader.fieldnames}")
        return list(reader)
    finally:
        if f is not source:
            f.close()


def sniff_header(source) -> list[str]:
    f = _open_text(source)
    try:
        lines = _data_lines(f)
    finally:
        if f is not source:
            f.close()
    if not lines:
        raise InputError("empty CSV")
    return [h.strip() for h in lines[0].strip().split(",")]


def _int(value: str, what: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise InputError(f"bad {what} value {value!r}") from None


def pair_sheets_to_rows(sheets: Iterable[PairSheet]) -> list[list]:
    rows = []
    for s in sheets:
        for t, a, b in zip(s.trial, s.a, s.b):
            rows.append([int(t), X_LABELS[s.setting.x], Y_LABELS[s.setting.y], int(a), int(b)])
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows


def read_pair_sheets(source, design: Design | None = None) -> tuple[PairSheet, ...]:
    """Parse ``trial,setting_x,setting_y,a,b`` rows into four sheets."""
    buckets = {i: ([], [], []) for i in range(4)}
    for row in _read_rows(source, PAIR_HEADER):
        sx, sy = row["setting_x"].strip(), row["setting_y"].strip()
        if sx not in X_LABELS or sy not in Y_LABELS:
            raise InputError(f"unknown setting labels {sx!r}, {sy!r}")
        idx = PAIR_INDEX.index((X_LABELS.index(sx), Y_LABELS.index(sy)))
        t, a, b = buckets[idx]
        t.append(_int(row["trial"], "trial"))
        a.append(_int(row["a"], "a"))
        b.append(_int(row["b"], "b"))
    pairs = design.pairs() if design else tuple(SettingPair(i, j) for i, j in PAIR_INDEX)
    return tuple(PairSheet(pairs[i], buckets[i][1], buckets[i][2], buckets[i][0]) for i in range(4))


def quadruples_to_rows(sheet: QuadrupleSheet) -> list[list]:
    return [[i, *map(int, row)] for i, row in enumerate(sheet.rows())]


def read_quadruples(source) -> QuadrupleSheet:
    rows = _read_rows(source, QUAD_HEADER)
    arr = [[_int(r[k], k) for k in QUAD_HEADER[1:]] for r in rows]
    return QuadrupleSheet.from_rows(np.array(arr, dtype=np.int8).reshape(-1, 4))


_VALUES = (1, -1)


def count_table_to_rows(table: CountTable) -> list[list]:
    return [[PAIR_NAMES[p], _VALUES[i], _VALUES[j], int(table.counts[p, i, j])]
            for p in range(4) for i in range(2) for j in range(2)]


def read_count_table(source) -> CountTable:
    c = np.zeros((4, 2, 2), dtype=np.int64)
    for row in _read_rows(source, COUNT_HEADER):
        name = row["setting_pair"].strip()
        if name not in PAIR_NAMES:
            raise InputError(f"unknown setting pair {name!r}")
        a, b = _int(row["a"], "a"), _int(row["b"], "b")
        if a not in _VALUES or b not in _VALUES:
            raise InputError("count table outcomes must be +1 or -1")
        c[PAIR_NAMES.index(name), _VALUES.index(a), _VALUES.index(b)] += _int(row["count"], "count")
    return CountTable(c)


def rows_to_csv(header: list[str], rows: list[list], comments: Iterable[str] = ()) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
