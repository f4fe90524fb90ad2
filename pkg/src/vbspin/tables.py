"""Comma-separated tables with ``# key: value`` metadata headers."""

from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .spectrum import Spectrum


class TableError(ValueError):
    pass


@dataclass
class DataTable:
    columns: list
    data: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if self.data.size == 0:
            self.data = self.data.reshape(0, len(self.columns))
        if self.data.shape[1] != len(self.columns):
            raise TableError(f"{len(self.columns)} column names for {self.data.shape[1]} columns")

    @property
    def units(self):
        """Unit annotation of each column: the suffix after the last ``_``, if any."""
        return [c.rsplit("_", 1)[1] if "_" in c else "" for c in self.columns]

    def column(self, name):
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            raise TableError(f"no column {name!r}; have {self.columns}") from None

    def to_text(self):
        buf = io.StringIO()
        for k, v in self.metadata.items():
            buf.write(f"# {k}: {v}\n")
        buf.write(",".join(self.columns) + "\n")
        for row in self.data:
            buf.write(",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        metadata, columns, rows = {}, None, []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    k, v = body.split(":", 1)
                    metadata[k.strip()] = v.strip()
                continue
            if columns is None:
                columns = [c.strip() for c in line.split(",")]
                continue
            parts = line.split(",")
            if len(parts) != len(columns):
                raise TableError(f"line {lineno}: expected {len(columns)} fields, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise TableError(f"line {lineno}: {exc}") from None
        if columns is None:
            raise TableError("table has no header row")
        return cls(columns, np.array(rows, dtype=float).reshape(len(rows), len(columns)), metadata)


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, table):
    atomic_write(path, table.to_text())


def read_table(path):
    with open(path) as fh:
        return DataTable.from_text(fh.read())


SPECTRUM_COLUMNS = ["frequency_MHz", "normalized_PL"]


def spectrum_table(spectrum):
    return DataTable(list(SPECTRUM_COLUMNS),
                     np.column_stack([spectrum.frequencies, spectrum.values]),
                     dict(spectrum.metadata))


def spectrum_from_table(table):
    if len(table.columns) != 2:
        raise TableError("a spectrum table needs exactly two columns")
    return Spectrum(table.data[:, 0], table.data[:, 1], dict(table.metadata))
