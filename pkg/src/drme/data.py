"""Observed-data container and CSV input/output."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np

from .kernels import as_points


class InputError(ValueError):
    """Malformed user input (bad CSV, non-binary treatment, ...)."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = as_points(self.X)
        Y = as_points(self.Y)
        A = np.asarray(self.A).ravel()
        if not (X.shape[0] == Y.shape[0] == A.shape[0]):
            raise InputError("X, A and Y must have the same number of rows")
        if not np.all((A == 0) | (A == 1)):
            raise InputError("treatment must be binary (0/1)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "A", A.astype(int))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.A[idx], self.Y[idx])


_X_COL = re.compile(r"^x_(\d+)$")
_Y_COL = re.compile(r"^y_(\d+)$")


def _check_header(header):
    xs = [int(m.group(1)) for h in header if (m := _X_COL.match(h))]
    ys = [int(m.group(1)) for h in header if (m := _Y_COL.match(h))]
    expected = [f"x_{i}" for i in range(1, len(xs) + 1)] + ["a"] + \
        [f"y_{i}" for i in range(1, len(ys) + 1)]
    if not xs or not ys or header != expected:
        raise InputError(
            "CSV header must be x_1..x_dx,a,y_1..y_dy; got " + ",".join(header))
    return len(xs), len(ys)


def read_csv(path) -> Dataset:
    """Read a dataset whose header is ``x_1..x_dx,a,y_1..y_dy``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        dx, dy = _check_header(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise InputError(f"{path}: line {lineno}: non-numeric field") from None
            if vals[dx] not in (0.0, 1.0):
                raise InputError(f"{path}: line {lineno}: treatment must be 0 or 1")
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.asarray(rows)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: non-finite values")
    return Dataset(arr[:, :dx], arr[:, dx], arr[:, dx + 1:])


def write_csv(data: Dataset, path) -> None:
    dx, dy = data.X.shape[1], data.Y.shape[1]
    header = [f"x_{i}" for i in range(1, dx + 1)] + ["a"] + [f"y_{i}" for i in range(1, dy + 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, a, y in zip(data.X, data.A, data.Y):
            w.writerow([repr(float(v)) for v in x] + [int(a)] + [repr(float(v)) for v in y])
