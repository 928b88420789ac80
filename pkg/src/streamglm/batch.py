"""The Batch container and its CSV representation.

CSV layout: a header ``delta,y,x1..xp[,z1..zq][,batch]``; ``y`` is an
empty field when ``delta`` is 0.  Numbers are written with 17 significant
digits so a write/read cycle is exact.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from typing import Iterator, TextIO

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Batch:
    """One chunk of the stream.

    ``y`` holds NaN wherever ``delta`` is 0; estimators never read those
    entries.  ``z`` is the optional nuisance-covariate block.
    """

    delta: np.ndarray
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray | None = None

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or delta.shape != (x.shape[0],) or y.shape != delta.shape:
            raise InvalidInputError(
                f"inconsistent batch shapes: delta {delta.shape}, y {y.shape}, x {x.shape}")
        if not np.all((delta == 0.0) | (delta == 1.0)):
            raise InvalidInputError("delta must be 0 or 1")
        observed = delta == 1.0
        if not np.all(np.isfinite(y[observed])):
            raise InvalidInputError("observed responses must be finite")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("covariates must be finite")
        y = np.where(observed, y, np.nan)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        if self.z is not None:
            z = np.atleast_2d(np.asarray(self.z, dtype=float))
            if z.shape[0] != x.shape[0]:
                raise InvalidInputError("z must have one row per observation")
            object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return 0 if self.z is None else self.z.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return self.delta == 1.0

    def y_filled(self) -> np.ndarray:
        """Responses with missing entries replaced by 0 (safe for arithmetic)."""
        return np.where(self.observed, self.y, 0.0)

    def digest(self) -> bytes:
        h = hashlib.sha256()
        for arr in (self.delta, self.y_filled(), self.x):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.z is not None:
            h.update(np.ascontiguousarray(self.z).tobytes())
        return h.digest()


def concat(batches) -> Batch:
    batches = list(batches)
    z = None
    if batches[0].z is not None:
        z = np.vstack([b.z for b in batches])
    return Batch(np.concatenate([b.delta for b in batches]),
                 np.concatenate([b.y for b in batches]),
                 np.vstack([b.x for b in batches]), z)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def header(p: int, q: int = 0, with_batch: bool = False) -> list[str]:
    cols = ["delta", "y"] + [f"x{i + 1}" for i in range(p)] + [f"z{i + 1}" for i in range(q)]
    if with_batch:
        cols.append("batch")
    return cols


def write_csv(batches, stream: TextIO, with_batch: bool = True) -> None:
    """Write batches in stream order, optionally tagging rows with a batch id."""
    batches = list(batches)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header(batches[0].p, batches[0].q, with_batch))
    for k, b in enumerate(batches, start=1):
        for i in range(b.n):
            row = [str(int(b.delta[i])), _fmt(b.y[i]) if b.delta[i] == 1.0 else ""]
            row += [_fmt(v) for v in b.x[i]]
            if b.z is not None:
                row += [_fmt(v) for v in b.z[i]]
            if with_batch:
                row.append(str(k))
            writer.writerow(row)


class CsvFormatError(InvalidInputError):
    """A data row could not be parsed; ``line`` is 1-based."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CsvSchemaError(InvalidInputError):
    """The header does not match the requested column layout."""


def read_csv(stream: TextIO, p: int, q: int = 0,
             batch_size: int | None = None) -> Iterator[Batch]:
    """Yield batches from a CSV stream.

    Rows are grouped by the ``batch`` column when present, otherwise chunked
    into ``batch_size`` rows in file order.
    """
    reader = csv.reader(stream)
    try:
        cols = [c.strip() for c in next(reader)]
    except StopIteration:
        raise CsvSchemaError("empty input") from None
    with_batch = cols[-1:] == ["batch"]
    expected = header(p, q, with_batch)
    if cols != expected:
        raise CsvSchemaError(f"header {cols} does not match expected {expected}")
    if not with_batch and not batch_size:
        raise CsvSchemaError("no batch column: a batch size is required")

    width = 2 + p + q
    rows: list[tuple[float, float, list[float]]] = []
    current = None
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(cols):
            raise CsvFormatError(f"expected {len(cols)} fields, got {len(row)}", line)
        key = row[-1] if with_batch else None
        if with_batch and current is not None and key != current and rows:
            yield _to_batch(rows, p, q)
            rows = []
        current = key
        try:
            delta = float(row[0])
        except ValueError:
            raise CsvFormatError(f"non-numeric delta {row[0]!r}", line) from None
        if delta not in (0.0, 1.0):
            raise CsvFormatError(f"delta must be 0 or 1, got {row[0]!r}", line)
        if delta == 1.0:
            if row[1].strip() == "":
                raise CsvFormatError("missing y with delta=1", line)
            try:
                y = float(row[1])
            except ValueError:
                raise CsvFormatError(f"non-numeric y {row[1]!r}", line) from None
        else:
            y = np.nan
        try:
            cov = [float(v) for v in row[2:width]]
        except ValueError:
            raise CsvFormatError("non-numeric covariate", line) from None
        if not np.all(np.isfinite(cov)) or (delta == 1.0 and not np.isfinite(y)):
            raise CsvFormatError("non-finite value", line)
        rows.append((delta, y, cov))
        if not with_batch and len(rows) == batch_size:
            yield _to_batch(rows, p, q)
            rows = []
    if rows:
        yield _to_batch(rows, p, q)


def _to_batch(rows, p, q) -> Batch:
    delta = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    cov = np.array([r[2] for r in rows]).reshape(len(rows), p + q)
    return Batch(delta, y, cov[:, :p], cov[:, p:] if q else None)


def to_csv_string(batches, with_batch: bool = True) -> str:
    buf = io.StringIO()
    write_csv(batches, buf, with_batch)
    return buf.getvalue()
