"""Per-layer min-max normalization of heatmaps and Euclidean distance matrices.

Heatmap entries of different layers live on different value ranges, so each
layer is min-max normalized over the whole error-inducing set before its
distance matrix is built; that makes clustering results comparable across
layers.  Improvement-set images are compared against the error-inducing
set on the raw (unnormalized) heatmaps instead, in a rectangular matrix.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

_DM_MAGIC = 0x44495331  # "DIS1"


@dataclass(frozen=True)
class NormalizationStats:
    """Global min/max of one layer's heatmap entries over the normalized set."""

    layer: int
    min: float
    max: float


def normalize_layer(
    heatmaps: Mapping[str, np.ndarray], layer: int = 0
) -> tuple[dict[str, np.ndarray], NormalizationStats]:
    """Min-max normalize every heatmap of one layer to the [0, 1] range.

    Min and max are taken globally over all entries of all given heatmaps.
    A degenerate layer (max == min) maps to all zeros rather than erroring;
    its distance matrix is identically zero and can never win the
    cross-layer cohesion comparison.
    """
    if not heatmaps:
        raise ValueError("normalize_layer needs at least one heatmap")
    lo = min(float(v.min()) for v in heatmaps.values())
    hi = max(float(v.max()) for v in heatmaps.values())
    stats = NormalizationStats(layer, lo, hi)
    span = hi - lo
    if span == 0.0:
        return {k: np.zeros_like(v) for k, v in heatmaps.items()}, stats
    return {k: (v - lo) / span for k, v in heatmaps.items()}, stats


def heatmap_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two equally shaped heatmap matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"heatmap dimensions differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt((diff * diff).sum()))


def _stack(heatmaps: Mapping[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    ids = list(heatmaps)
    shapes = {heatmaps[i].shape for i in ids}
    if len(shapes) > 1:
        raise ValueError(f"heatmap dimensions differ within the set: {sorted(shapes)}")
    return ids, np.stack([heatmaps[i].ravel() for i in ids]).astype(np.float64)


def _condensed_index(i: int, j: int, n: int) -> int:
    if i > j:
        i, j = j, i
    return i * n - i * (i + 1) // 2 + (j - i - 1)


@dataclass
class DistanceMatrix:
    """Symmetric pairwise distances, packed one entry per unordered pair.

    ``condensed`` holds the n*(n-1)/2 strict-triangle entries row by row
    (the usual condensed order); the diagonal is implicitly zero.  Packing
    halves the memory of the d*n^2-scale cost center.
    """

    ids: list[str]
    condensed: np.ndarray
    layer: int = 0
    normalized: bool = True

    def __post_init__(self):
        n = len(self.ids)
        self.condensed = np.asarray(self.condensed, dtype=np.float64)
        if self.condensed.shape != (n * (n - 1) // 2,):
            raise ValueError("condensed length does not match the id count")

    @property
    def n(self) -> int:
        return len(self.ids)

    def value(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        return float(self.condensed[_condensed_index(i, j, self.n)])

    def square(self) -> np.ndarray:
        n = self.n
        out = np.zeros((n, n))
        k = 0
        for i in range(n - 1):
            row = self.condensed[k : k + n - 1 - i]
            out[i, i + 1 :] = row
            out[i + 1 :, i] = row
            k += n - 1 - i
        return out

    @classmethod
    def from_square(
        cls, matrix: np.ndarray, ids=None, layer: int = 0, normalized: bool = True
    ) -> "DistanceMatrix":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("distance matrix must be square")
        if np.isnan(matrix).any():
            raise ValueError("distance matrix contains NaN")
        if not np.array_equal(matrix, matrix.T):
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(matrix) != 0):
            raise ValueError("distance matrix has a nonzero diagonal")
        n = matrix.shape[0]
        if ids is None:
            ids = [str(i) for i in range(n)]
        cond = matrix[np.triu_indices(n, k=1)]
        return cls(list(ids), cond, layer, normalized)

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<IBiII", _DM_MAGIC, 0, self.layer, self.n, self.n))
            fh.write(struct.pack("<B", int(self.normalized)))
            fh.write(np.ascontiguousarray(self.condensed, dtype="<f8").tobytes())
        _write_ids_sidecar(path, self.ids, self.ids)

    @classmethod
    def load(cls, path) -> "DistanceMatrix":
        path = Path(path)
        data = path.read_bytes()
        magic, kind, layer, n, _m = struct.unpack_from("<IBiII", data, 0)
        if magic != _DM_MAGIC or kind != 0:
            raise ValueError(f"{path}: not a packed distance matrix file")
        offset = struct.calcsize("<IBiII")
        normalized = bool(data[offset])
        offset += 1
        cond = np.frombuffer(data, dtype="<f8", count=n * (n - 1) // 2, offset=offset)
        rows, _cols = _read_ids_sidecar(path)
        return cls(rows, cond.copy(), layer, normalized)


@dataclass
class RectDistanceMatrix:
    """Rectangular distances: improvement-set rows against error-inducing columns."""

    row_ids: list[str]
    col_ids: list[str]
    values: np.ndarray
    layer: int = 0
    normalized: bool = False
    col_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.row_ids), len(self.col_ids)):
            raise ValueError("rectangular matrix shape does not match the id lists")
        self.col_index = {c: k for k, c in enumerate(self.col_ids)}

    def row(self, image_id: str) -> np.ndarray:
        return self.values[self.row_ids.index(image_id)]

    def save(self, path) -> None:
        path = Path(path)
        r, c = self.values.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<IBiII", _DM_MAGIC, 1, self.layer, r, c))
            fh.write(struct.pack("<B", int(self.normalized)))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        _write_ids_sidecar(path, self.row_ids, self.col_ids)

    @classmethod
    def load(cls, path) -> "RectDistanceMatrix":
        path = Path(path)
        data = path.read_bytes()
        magic, kind, layer, r, c = struct.unpack_from("<IBiII", data, 0)
        if magic != _DM_MAGIC or kind != 1:
            raise ValueError(f"{path}: not a rectangular distance matrix file")
        offset = struct.calcsize("<IBiII")
        normalized = bool(data[offset])
        offset += 1
        values = np.frombuffer(data, dtype="<f8", count=r * c, offset=offset).reshape(r, c)
        rows, cols = _read_ids_sidecar(path)
        return cls(rows, cols, values.copy(), layer, normalized)


def _write_ids_sidecar(path: Path, rows, cols) -> None:
    with open(path.with_suffix(path.suffix + ".ids.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["role", "id"])
        for r in rows:
            writer.writerow(["row", r])
        for c in cols:
            writer.writerow(["col", c])


def _read_ids_sidecar(path: Path) -> tuple[list[str], list[str]]:
    rows, cols = [], []
    with open(path.with_suffix(path.suffix + ".ids.csv"), newline="") as fh:
        for record in csv.DictReader(fh):
            (rows if record["role"] == "row" else cols).append(record["id"])
    return rows, cols


def distance_matrix(
    heatmaps: Mapping[str, np.ndarray], layer: int = 0, normalized: bool = True
) -> DistanceMatrix:
    """All pairwise heatmap distances over one layer's set.

    Rows follow the mapping's iteration order, so the result is
    deterministic for insertion-ordered inputs.
    """
    if len(heatmaps) < 2:
        raise ValueError("distance matrix needs at least 2 heatmaps")
    ids, flat = _stack(heatmaps)
    n = len(ids)
    parts = []
    for i in range(n - 1):
        diff = flat[i + 1 :] - flat[i]
        parts.append(np.sqrt((diff * diff).sum(axis=1)))
    return DistanceMatrix(ids, np.concatenate(parts), layer, normalized)


def improvement_distance_matrix(
    improvement: Mapping[str, np.ndarray],
    error_inducing: Mapping[str, np.ndarray],
    layer: int = 0,
) -> RectDistanceMatrix:
    """Rectangular matrix of raw-heatmap distances, one row per improvement image."""
    if not improvement or not error_inducing:
        raise ValueError("both heatmap sets must be nonempty")
    row_ids, rows = _stack(improvement)
    col_ids, cols = _stack(error_inducing)
    if rows.shape[1] != cols.shape[1]:
        raise ValueError("heatmap dimensions differ between the two sets")
    values = np.empty((len(row_ids), len(col_ids)))
    for i in range(len(row_ids)):
        diff = cols - rows[i]
        values[i] = np.sqrt((diff * diff).sum(axis=1))
    return RectDistanceMatrix(row_ids, col_ids, values, layer, normalized=False)
