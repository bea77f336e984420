"""Observed-data container, design matrices and CSV ingestion.

Covariates are kept raw. Intercepts and squared terms only exist in the
design matrices built from a :class:`DesignSpec`, so the propensity and
outcome models can use different designs on the same data.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised when raw inputs violate the dataset contract."""


@dataclass(frozen=True)
class Dataset:
    """Observed triples (Y, T, X).

    Attributes
    ----------
    y : ndarray, shape (n,)
        Outcome.
    t : ndarray of int, shape (n,)
        Treatment indicator, every entry 0 or 1.
    x : ndarray, shape (n, p)
        Raw covariates without intercept.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    column_names: tuple[str, ...] = field(default=(), compare=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def arm_indicator(self, arm: int) -> np.ndarray:
        """0/1 float indicator of membership in treatment level ``arm``."""
        return (self.t == arm).astype(float)

    def take(self, rows) -> "Dataset":
        """Row subset (or resample) preserving the given order."""
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.t[rows], self.x[rows], self.column_names)

    def with_outcome(self, y) -> "Dataset":
        return validate_dataset(y, self.t, self.x, self.column_names)

    def append_unit(self, y0: float, t0: int, x0) -> "Dataset":
        """New dataset with one extra unit at the end."""
        y = np.append(self.y, float(y0))
        t = np.append(self.t, int(t0))
        x = np.vstack([self.x, np.asarray(x0, dtype=float).reshape(1, -1)])
        return validate_dataset(y, t, x, self.column_names)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def validate_dataset(y, t, x, column_names: Sequence[str] = ()) -> Dataset:
    """Check raw columns and return an immutable :class:`Dataset`.

    Raises
    ------
    DataError
        On length mismatch, a treatment value other than 0/1, or a
        non-finite outcome or covariate. Messages name the row (0-based).
    """
    y = np.array(y, dtype=float).reshape(-1)
    t_raw = np.array(t, dtype=float).reshape(-1)
    x = np.array(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise DataError(f"covariates must be a 2-d array, got {x.ndim} dimensions")
    n = y.shape[0]
    if t_raw.shape[0] != n or x.shape[0] != n:
        raise DataError(
            f"length mismatch: y has {n} rows, t has {t_raw.shape[0]}, x has {x.shape[0]}"
        )
    if n < 2:
        raise DataError(f"need at least 2 units, got {n}")
    bad_t = np.flatnonzero(~((t_raw == 0) | (t_raw == 1)))
    if bad_t.size:
        i = int(bad_t[0])
        raise DataError(f"non-binary treatment at row {i}: {t_raw[i]!r}")
    bad_y = np.flatnonzero(~np.isfinite(y))
    if bad_y.size:
        i = int(bad_y[0])
        raise DataError(f"non-finite outcome at row {i}: {y[i]!r}")
    bad_x = np.argwhere(~np.isfinite(x))
    if bad_x.size:
        i, j = (int(v) for v in bad_x[0])
        raise DataError(f"non-finite covariate at row {i}, column {j}: {x[i, j]!r}")
    t_int = t_raw.astype(np.int64)
    return Dataset(_freeze(y), _freeze(t_int), _freeze(x), tuple(column_names))


def require_arms(dataset: Dataset, arms: Sequence[int] = (0, 1)) -> None:
    """Raise unless every requested treatment level has at least one unit."""
    for arm in arms:
        if not np.any(dataset.t == arm):
            raise DataError(f"treatment arm {arm} is empty")


@dataclass(frozen=True)
class DesignSpec:
    """Which covariate columns enter a design matrix.

    Columns are ordered ``[intercept?, selected..., squared quadratic...]``.
    """

    selected_columns: tuple[int, ...] = ()
    intercept: bool = True
    quadratic_columns: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "selected_columns", tuple(int(c) for c in self.selected_columns))
        object.__setattr__(self, "quadratic_columns", tuple(int(c) for c in self.quadratic_columns))
        for name in ("selected_columns", "quadratic_columns"):
            cols = getattr(self, name)
            if len(set(cols)) != len(cols):
                raise DataError(f"duplicate column index in {name}: {cols}")

    @property
    def n_terms(self) -> int:
        return int(self.intercept) + len(self.selected_columns) + len(self.quadratic_columns)

    @classmethod
    def all_columns(cls, p: int, intercept: bool = True) -> "DesignSpec":
        return cls(tuple(range(p)), intercept)


def build_design(dataset: Dataset | np.ndarray, spec: DesignSpec) -> np.ndarray:
    """Design matrix of shape (n, q) for ``spec``.

    ``dataset`` may also be a raw covariate matrix.
    """
    x = dataset.x if isinstance(dataset, Dataset) else np.atleast_2d(np.asarray(dataset, float))
    p = x.shape[1]
    for c in spec.selected_columns + spec.quadratic_columns:
        if not 0 <= c < p:
            raise DataError(f"covariate index {c} out of range for {p} columns")
    parts = []
    if spec.intercept:
        parts.append(np.ones((x.shape[0], 1)))
    if spec.selected_columns:
        parts.append(x[:, list(spec.selected_columns)])
    if spec.quadratic_columns:
        parts.append(x[:, list(spec.quadratic_columns)] ** 2)
    if not parts:
        raise DataError("design spec selects no terms")
    return np.hstack(parts)


# -- CSV ---------------------------------------------------------------------


def _resolve_column(ref, header: list[str] | None, width: int, what: str) -> int:
    if isinstance(ref, str) and header is not None and ref in header:
        return header.index(ref)
    try:
        idx = int(ref)
    except (TypeError, ValueError):
        raise DataError(f"missing {what} column {ref!r}") from None
    if not 0 <= idx < width:
        raise DataError(f"{what} column index {idx} out of range for {width} columns")
    return idx


def _parse_cell(text: str, row: int, col: str) -> float:
    s = text.strip()
    try:
        if not s or "_" in s or "," in s:
            raise ValueError
        v = float(s)
    except ValueError:
        raise DataError(f"unparsable cell at row {row}, column {col}: {text!r}") from None
    return v


def read_rows(path) -> list[list[str]]:
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    with open(path, newline="") as fh:
        return [r for r in csv.reader(fh) if r]


def load_csv(
    path,
    outcome_column,
    treatment_column,
    covariate_columns: Sequence = (),
    header: bool = True,
) -> Dataset:
    """Read a comma-separated file into a validated :class:`Dataset`.

    Columns may be addressed by header name or by 0-based index; with
    ``header=False`` only indices work. Row order is preserved. Reported
    row numbers count data rows from 0.
    """
    rows = read_rows(path)
    names = None
    if header:
        if not rows:
            raise DataError(f"{path}: empty file")
        names = [h.strip() for h in rows[0]]
        rows = rows[1:]
    width = len(names) if names is not None else (len(rows[0]) if rows else 0)
    yi = _resolve_column(outcome_column, names, width, "outcome")
    ti = _resolve_column(treatment_column, names, width, "treatment")
    xi = [_resolve_column(c, names, width, "covariate") for c in covariate_columns]
    label = (lambda j: names[j]) if names is not None else str

    cols = [yi, ti] + xi
    data = np.empty((len(rows), len(cols)))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"row {r} has {len(row)} fields, expected {width}")
        for k, j in enumerate(cols):
            data[r, k] = _parse_cell(row[j], r, label(j))
    x = data[:, 2:] if xi else np.zeros((len(rows), 0))
    cov_names = tuple(label(j) for j in xi)
    return validate_dataset(data[:, 0], data[:, 1], x, cov_names)


def format_real(v: float) -> str:
    """Shortest round-tripping decimal text (17 significant digits at most)."""
    return repr(float(v))


def write_csv(dataset: Dataset, path, header: bool = True) -> None:
    """Write ``y,t,<covariates>``; re-reading with :func:`load_csv` is exact."""
    names = list(dataset.column_names) or [f"x{j + 1}" for j in range(dataset.p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(["y", "t"] + names)
        for i in range(dataset.n):
            w.writerow(
                [format_real(dataset.y[i]), str(int(dataset.t[i]))]
                + [format_real(v) for v in dataset.x[i]]
            )
