"""Structural connectivity matrices: ingestion, log-normalization, sub-networks."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, ShapeError, SymmetryError

SYMMETRY_TOL = 1e-9


def default_labels(n: int) -> list[str]:
    return [f"R{i:03d}" for i in range(n)]


@dataclass(frozen=True)
class ConnectivityMatrix:
    """Symmetric, nonnegative fiber-count matrix with one label per region."""

    values: np.ndarray
    region_labels: list = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ShapeError(f"connectivity matrix must be square, got shape {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("connectivity matrix contains NaN or infinite entries")
        if (vals < 0).any():
            i, j = np.argwhere(vals < 0)[0]
            raise ValueError(f"negative fiber count {vals[i, j]} at ({i}, {j})")
        diff = np.abs(vals - vals.T)
        if diff.max(initial=0.0) > SYMMETRY_TOL:
            i, j = np.unravel_index(int(diff.argmax()), diff.shape)
            raise SymmetryError(
                f"matrix is not symmetric: worst pair ({i}, {j}) has {vals[i, j]!r} vs {vals[j, i]!r}")
        n = vals.shape[0]
        labels = default_labels(n) if self.region_labels is None else [str(s) for s in self.region_labels]
        if len(labels) != n:
            raise ShapeError(f"{len(labels)} region labels for {n} regions")
        if any(not s for s in labels):
            raise ValueError("region labels must be non-empty")
        if len(set(labels)) != n:
            raise ValueError("region labels must be unique")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "region_labels", labels)

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class NormalizedConnectome:
    values: np.ndarray
    mu: float
    sigma: float
    region_labels: list

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SubNetworkBatch:
    """One subject's N sub-networks; ``rows[i]`` is region i's connectivity row."""

    subject_id: str
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1]:
            raise ShapeError(f"expected N rows of length N, got shape {rows.shape}")
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def stack(self) -> np.ndarray:
        return np.array(self.rows)


def _parse_rows(lines: Sequence[list[str]]):
    labels = None
    rows = [r for r in lines if r and any(c.strip() for c in r)]
    if not rows:
        raise ShapeError("file holds no matrix rows")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        labels = [c.strip() for c in rows[0]]
        rows = rows[1:]
    try:
        data = [[float(c) for c in r] for r in rows]
    except ValueError as exc:
        raise ValueError(f"non-numeric matrix entry: {exc}") from exc
    widths = {len(r) for r in data}
    if len(widths) != 1 or widths.pop() != len(data):
        raise ShapeError(f"matrix is not square ({len(data)} rows, widths {sorted({len(r) for r in data})})")
    return np.array(data, dtype=np.float64), labels


def parse_matrix(text: str, format: str = "csv") -> ConnectivityMatrix:
    if format == "csv":
        lines = list(csv.reader(io.StringIO(text)))
    elif format == "dense-text":
        lines = [ln.split() for ln in text.splitlines()]
    else:
        raise ValueError(f"unknown matrix format {format!r}")
    values, labels = _parse_rows(lines)
    return ConnectivityMatrix(values, labels)


def load_matrix(path, format: str = "csv") -> ConnectivityMatrix:
    """Read a CSV or whitespace-separated matrix, optionally headed by region labels."""
    return parse_matrix(Path(path).read_text(encoding="utf-8"), format)


def format_number(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def save_matrix(sc: ConnectivityMatrix, path, header: bool = True) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(sc.region_labels)
    for row in sc.values:
        w.writerow([format_number(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def log_normalize(sc: ConnectivityMatrix) -> NormalizedConnectome:
    """``(log2(SC + 1) - mean) / std`` with whole-matrix population statistics."""
    logged = np.log2(sc.values + 1.0)
    mu = float(logged.mean())
    sigma = float(logged.std())
    if not sigma > 0.0:
        raise DegenerateInputError("matrix has zero variance after the log transform")
    return NormalizedConnectome((logged - mu) / sigma, mu, sigma, list(sc.region_labels))


def to_subnetworks(nc: NormalizedConnectome, subject_id: str) -> SubNetworkBatch:
    return SubNetworkBatch(subject_id, np.array(nc.values, copy=True))
