"""Sequences, regressors, norms and the CSV record format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed, non-finite or too-short data."""


class RecordParseError(DataError):
    pass


@dataclass(frozen=True)
class Signal:
    """A finite sequence on an integer time axis.

    ``samples[k]`` is the value at time ``start_index + k``. Samples are
    scalars (1-d array) or fixed-width vectors (2-d array, one row per time).
    """

    samples: np.ndarray
    start_index: int = 1

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        if arr.ndim not in (1, 2):
            raise DataError("samples must be scalars or fixed-width vectors")
        if not np.all(np.isfinite(arr)):
            raise DataError("signal contains non-finite samples")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "start_index", int(self.start_index))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def stop_index(self) -> int:
        """One past the last valid time index."""
        return self.start_index + len(self)

    def at(self, t: int) -> float:
        k = t - self.start_index
        if k < 0 or k >= len(self):
            raise IndexError(f"time {t} outside [{self.start_index}, {self.stop_index})")
        return self.samples[k]

    def window(self, t0: int, t1: int) -> np.ndarray:
        """Samples for times t0 <= t < t1."""
        if t0 < self.start_index or t1 > self.stop_index or t1 < t0:
            raise IndexError(f"window [{t0}, {t1}) outside [{self.start_index}, {self.stop_index})")
        return self.samples[t0 - self.start_index : t1 - self.start_index]


@dataclass(frozen=True)
class Regressor:
    entries: np.ndarray
    n: int

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        if arr.size != 2 * self.n - 1:
            raise ValueError(f"regressor of order {self.n} needs {2 * self.n - 1} entries, got {arr.size}")

    def __len__(self) -> int:
        return self.entries.size


@dataclass(frozen=True)
class DataRecord:
    """Measured input/output pairs on the time axis 1-L ... 0."""

    u: Signal
    y: Signal
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.u.samples.ndim != 1 or self.y.samples.ndim != 1:
            raise DataError("records are scalar (SISO)")
        if len(self.u) != len(self.y):
            raise DataError(f"u has {len(self.u)} samples, y has {len(self.y)}")
        if len(self.u) == 0:
            raise DataError("empty record")
        if self.u.start_index != self.y.start_index or self.u.start_index != 1 - len(self.u):
            raise DataError("record signals must be indexed 1-L ... 0")

    @classmethod
    def from_arrays(cls, u, y) -> "DataRecord":
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        if u.shape != y.shape:
            raise DataError(f"u has {u.shape[0]} samples, y has {y.shape[0]}")
        start = 1 - u.shape[0]
        return cls(Signal(u, start), Signal(y, start))

    @property
    def L(self) -> int:
        return len(self.u)


def lp_norm(x, p: float = 2.0) -> float:
    """l_p norm of a vector, or of a signal summed over components and time.

    For ``p = inf`` the largest absolute entry is returned.
    """
    if isinstance(x, Signal):
        x = x.samples
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        raise ValueError("norm of an empty vector is undefined")
    if not (p >= 1):
        raise ValueError(f"p must be >= 1, got {p}")
    a = np.abs(arr).ravel()
    m = float(a.max())
    if math.isinf(p) or m == 0.0:
        return m
    if p == 1:
        return float(a.sum())
    # scale by the largest entry so tiny or huge samples neither under- nor overflow
    s = a / m
    if p == 2:
        return m * float(np.sqrt(np.dot(s, s)))
    return m * float(np.sum(s**p) ** (1.0 / p))


def regressor_entries(y, u, k: int, n: int) -> np.ndarray:
    """Raw array version of :func:`build_regressor` on 0-based arrays.

    Returns ``(y[k], ..., y[k-n+1], u[k-1], ..., u[k-n+1])``.
    """
    if k - n + 1 < 0 or k >= len(y) or (n > 1 and k - 1 >= len(u)):
        raise IndexError(f"insufficient history for order {n} at position {k}")
    out = np.empty(2 * n - 1)
    out[:n] = y[k - n + 1 : k + 1][::-1]
    if n > 1:
        out[n:] = u[k - n + 1 : k][::-1]
    return out


def build_regressor(y: Signal, u: Signal, t: int, n: int) -> Regressor:
    """Regressor ``(y_t, ..., y_{t-n+1}, u_{t-1}, ..., u_{t-n+1})`` at time ``t``."""
    if n < 1:
        raise ValueError("order must be >= 1")
    lo = t - n + 1
    if lo < y.start_index or t >= y.stop_index:
        raise IndexError(f"output history missing for t={t}, n={n}")
    if n > 1 and (lo < u.start_index or t - 1 >= u.stop_index):
        raise IndexError(f"input history missing for t={t}, n={n}")
    ys = y.window(lo, t + 1)[::-1]
    us = u.window(lo, t)[::-1] if n > 1 else np.empty(0)
    return Regressor(np.concatenate([ys, us]), n)


def load_record(path, columns: tuple[str, str] = ("u", "y")) -> DataRecord:
    """Read a record CSV.

    The canonical layout has the header ``t,u,y``. Files without a header are
    read as bare ``u,y`` pairs. ``columns`` names the input and output columns
    when a header is present.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read record {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise RecordParseError(f"{path}: empty record")

    iu, iy = 0, 1
    first_line, first = rows[0]
    if not _is_numeric_row(first):
        header = [c.strip() for c in first]
        try:
            iu, iy = header.index(columns[0]), header.index(columns[1])
        except ValueError:
            raise RecordParseError(f"{path}:{first_line}: header {header} lacks columns {columns}") from None
        rows = rows[1:]
    if not rows:
        raise RecordParseError(f"{path}: no data rows")

    u, y = [], []
    width = max(iu, iy) + 1
    for line, r in rows:
        if len(r) < width:
            raise RecordParseError(f"{path}:{line}: expected at least {width} columns, got {len(r)}")
        try:
            uv, yv = float(r[iu]), float(r[iy])
        except ValueError:
            raise RecordParseError(f"{path}:{line}: non-numeric value in {r}") from None
        if not (math.isfinite(uv) and math.isfinite(yv)):
            raise DataError(f"{path}:{line}: non-finite value in {r}")
        u.append(uv)
        y.append(yv)
    return DataRecord.from_arrays(u, y)


def save_record(record: DataRecord, path) -> None:
    t = np.arange(record.u.start_index, record.u.stop_index)
    write_csv(path, ["t", "u", "y"], [t, record.u.samples, record.y.samples])


def write_csv(path, header, columns) -> None:
    """Write columns with ``repr`` floats (shortest exact round-trip)."""
    cols = [np.asarray(c) for c in columns]
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


def _is_numeric_row(row) -> bool:
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True
