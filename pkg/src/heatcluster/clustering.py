"""Ward-linkage agglomerative clustering and cluster-count/layer selection.

The dendrogram is built with the Lance-Williams update for Ward's
criterion, directly from a pairwise distance matrix.  Cohesion of a
clustering is measured as the weighted average intra-cluster distance:
each cluster's mean pairwise member distance is weighted by its relative
size, summed, and divided by the cluster count.  The cluster count is
chosen at the knee of the cohesion-versus-k curve, and the layer whose
best clustering has minimal cohesion value wins.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import InterpolatedUnivariateSpline

from .heatspace import DistanceMatrix, distance_matrix

logger = logging.getLogger(__name__)

MAX_CANDIDATE_K = 50


@dataclass(frozen=True)
class Merge:
    """One agglomeration step; node ids follow the usual convention:
    leaves are 0..n-1, the i-th merge creates node n+i."""

    left: int
    right: int
    height: float
    size: int


@dataclass
class Dendrogram:
    n_leaves: int
    merges: list[Merge]
    ids: list[str]

    def __post_init__(self):
        if len(self.merges) != self.n_leaves - 1:
            raise ValueError("a dendrogram over n leaves needs exactly n-1 merges")


@dataclass
class ClusterAssignment:
    """Cluster labels in [0, k) for every image, k nonempty clusters.

    Cluster ids are assigned by ascending smallest member index, so equal
    partitions always carry equal labels.
    """

    ids: list[str]
    labels: np.ndarray
    k: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (len(self.ids),):
            raise ValueError("labels must align with ids")
        present = np.unique(self.labels)
        if not np.array_equal(present, np.arange(self.k)):
            raise ValueError(f"expected exactly {self.k} contiguous nonempty clusters")

    def members(self, cluster: int) -> list[str]:
        if not 0 <= cluster < self.k:
            raise KeyError(f"unknown cluster id {cluster}")
        return [i for i, lab in zip(self.ids, self.labels) if lab == cluster]

    def member_indices(self, cluster: int) -> np.ndarray:
        if not 0 <= cluster < self.k:
            raise KeyError(f"unknown cluster id {cluster}")
        return np.flatnonzero(self.labels == cluster)

    def sizes(self) -> dict[int, int]:
        return {c: int((self.labels == c).sum()) for c in range(self.k)}


@dataclass
class LayerClusteringResult:
    layer: int
    k: int
    assignment: ClusterAssignment
    icds: dict[int, float]
    wicd: float
    curve: list[tuple[int, float]]
    weak_knee: bool = False


@dataclass
class RootCauseClusters:
    """The winning layer's clustering: the root-cause groups of the error set."""

    layer: int
    result: LayerClusteringResult

    @property
    def assignment(self) -> ClusterAssignment:
        return self.result.assignment

    @property
    def k(self) -> int:
        return self.result.k

    def members(self, cluster: int) -> list[str]:
        return self.assignment.members(cluster)

    def cluster_sizes(self) -> dict[int, int]:
        return self.assignment.sizes()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "cluster_id"])
            for image_id, label in zip(self.assignment.ids, self.assignment.labels):
                writer.writerow([image_id, int(label)])

    def summary(self) -> dict:
        return {
            "layer": self.layer,
            "k": self.k,
            "wicd": self.result.wicd,
            "weak_knee": self.result.weak_knee,
            "cluster_sizes": {str(c): s for c, s in self.cluster_sizes().items()},
            "cluster_icds": {str(c): v for c, v in self.result.icds.items()},
        }

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def hac_ward(dm: DistanceMatrix) -> Dendrogram:
    """Agglomerate with Ward linkage via the Lance-Williams recurrence.

    Ties on the merge distance break towards the lexicographically lowest
    (left, right) node-id pair, which makes the merge order deterministic.
    """
    if dm.n < 2:
        raise ValueError("clustering needs at least 2 observations")
    if np.isnan(dm.condensed).any():
        raise ValueError("distance matrix contains NaN")
    n = dm.n
    # Work on squared distances; heights are the square roots.
    d2 = np.square(dm.square())
    np.fill_diagonal(d2, np.inf)
    active = list(range(n))  # positions map to node ids
    node_ids = list(range(n))
    sizes = {i: 1 for i in range(n)}
    merges: list[Merge] = []
    for step in range(n - 1):
        m = len(active)
        best_val = np.inf
        best = None  # (left id, right id, position a, position b)
        for a in range(m - 1):
            row = d2[a, a + 1 : m]
            row_min = row.min()
            if row_min > best_val:
                continue
            # Exact ties are resolved towards the lowest (left, right) node
            # ids, so every position attaining the row minimum is examined.
            for b_off in np.flatnonzero(row == row_min):
                b = a + 1 + int(b_off)
                lo, hi = sorted((node_ids[a], node_ids[b]))
                if row_min < best_val or (lo, hi) < (best[0], best[1]):
                    best_val = row_min
                    best = (lo, hi, a, b)
        left, right, ai, bi = best
        ida, idb = node_ids[ai], node_ids[bi]
        na, nb = sizes[ida], sizes[idb]
        new_id = n + step
        sizes[new_id] = na + nb
        merges.append(Merge(left, right, float(np.sqrt(best_val)), na + nb))
        # Lance-Williams Ward update against every other active cluster.
        keep = [p for p in range(m) if p not in (ai, bi)]
        if keep:
            nc = np.array([sizes[node_ids[p]] for p in keep], dtype=np.float64)
            dac = d2[ai, keep]
            dbc = d2[bi, keep]
            updated = ((na + nc) * dac + (nb + nc) * dbc - nc * best_val) / (na + nb + nc)
            d2[ai, keep] = updated
            d2[keep, ai] = updated
        node_ids[ai] = new_id
        # Drop position bi by swapping in the last active position.
        last = m - 1
        if bi != last:
            d2[bi, :m] = d2[last, :m]
            d2[:m, bi] = d2[:m, last]
            d2[bi, bi] = np.inf
            node_ids[bi] = node_ids[last]
        active.pop()
        node_ids.pop()
    return Dendrogram(n, merges, list(dm.ids))


def cut(dendrogram: Dendrogram, k: int) -> ClusterAssignment:
    """Undo the last k-1 merges: replay the first n-k merges and read off groups."""
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    groups: dict[int, list[int]] = {i: [i] for i in range(n)}
    for step in range(n - k):
        merge = dendrogram.merges[step]
        merged = groups.pop(merge.left) + groups.pop(merge.right)
        groups[n + step] = merged
    clusters = sorted((sorted(members) for members in groups.values()), key=lambda g: g[0])
    labels = np.empty(n, dtype=np.int64)
    for cid, members in enumerate(clusters):
        labels[members] = cid
    return ClusterAssignment(list(dendrogram.ids), labels, k)


def icd(assignment: ClusterAssignment, dm: DistanceMatrix, cluster: int) -> float:
    """Mean pairwise distance between cluster members; singletons count 0."""
    members = assignment.member_indices(cluster)
    m = len(members)
    if m < 2:
        return 0.0
    total = 0.0
    for a in range(m - 1):
        for b in range(a + 1, m):
            total += dm.value(int(members[a]), int(members[b]))
    return total / (m * (m - 1) // 2)


def _icds_fast(assignment: ClusterAssignment, square: np.ndarray) -> dict[int, float]:
    out = {}
    for c in range(assignment.k):
        members = assignment.member_indices(c)
        m = len(members)
        if m < 2:
            out[c] = 0.0
        else:
            out[c] = float(square[np.ix_(members, members)].sum() / (m * (m - 1)))
    return out


def wicd(assignment: ClusterAssignment, dm: DistanceMatrix) -> float:
    """Size-weighted mean of per-cluster ICDs, divided by the cluster count."""
    square = dm.square()
    return _wicd_from_icds(assignment, _icds_fast(assignment, square))


def _wicd_from_icds(assignment: ClusterAssignment, icds: Mapping[int, float]) -> float:
    n = len(assignment.ids)
    weighted = sum(icds[c] * (len(assignment.member_indices(c)) / n) for c in range(assignment.k))
    return weighted / assignment.k


def wicd_curve(
    dendrogram: Dendrogram, dm: DistanceMatrix, k_range: Sequence[int]
) -> list[tuple[int, float]]:
    """Cohesion value for every candidate cluster count."""
    square = dm.square()
    curve = []
    for k in k_range:
        assignment = cut(dendrogram, k)
        curve.append((int(k), _wicd_from_icds(assignment, _icds_fast(assignment, square))))
    return curve


@dataclass(frozen=True)
class KneePoint:
    k: int
    weak: bool = False


def knee_point(curve: Sequence[tuple[int, float]]) -> KneePoint:
    """Knee of a metric-versus-k curve.

    The curve is interpolated with a cubic spline and resampled on a unit-k
    grid, differentiated with fourth-order central differences (one-sided
    lower-order stencils at the ends), min-max normalized, and the knee is
    the grid point where the normalized derivative deviates most from the
    straight chord between its first and last points.  Curves shorter than
    7 points fall back to the end of the largest single-step drop; a flat
    derivative yields the mid-range k with the ``weak`` flag set.
    """
    ks = np.array([int(k) for k, _ in curve])
    vs = np.array([float(v) for _, v in curve], dtype=np.float64)
    if len(ks) < 2:
        raise ValueError("knee detection needs at least 2 curve points")
    if np.any(np.diff(ks) <= 0):
        raise ValueError("curve k values must be strictly increasing")

    if len(ks) < 7:
        drops = vs[:-1] - vs[1:]
        return KneePoint(int(ks[int(np.argmax(drops)) + 1]), weak=False)

    grid = np.arange(ks[0], ks[-1] + 1)
    smooth = InterpolatedUnivariateSpline(ks, vs, k=3)(grid)

    deriv = np.empty_like(smooth)
    # Fourth-order central stencil in the interior.
    deriv[2:-2] = (-smooth[4:] + 8 * smooth[3:-1] - 8 * smooth[1:-3] + smooth[:-4]) / 12.0
    # Lower-order one-sided stencils at the boundary.
    deriv[0] = smooth[1] - smooth[0]
    deriv[1] = (smooth[2] - smooth[0]) / 2.0
    deriv[-2] = (smooth[-1] - smooth[-3]) / 2.0
    deriv[-1] = smooth[-1] - smooth[-2]

    span = deriv.max() - deriv.min()
    scale = np.abs(deriv).max()
    # A derivative that is flat up to floating-point noise carries no knee.
    if span <= 1e-9 * max(scale, 1e-300):
        return KneePoint(int(grid[len(grid) // 2]), weak=True)
    normed = (deriv - deriv.min()) / span

    chord = normed[0] + (normed[-1] - normed[0]) * (grid - grid[0]) / (grid[-1] - grid[0])
    gap = np.abs(normed - chord)
    if gap.max() < 1e-9:
        return KneePoint(int(grid[len(grid) // 2]), weak=True)
    return KneePoint(int(grid[int(np.argmax(gap))]), weak=False)


def candidate_k_range(n: int, max_k: int = MAX_CANDIDATE_K) -> list[int]:
    """Cluster counts to scan: [2, min(n-1, max_k)], never empty for n >= 2."""
    hi = min(n - 1, max_k)
    if hi < 2:
        hi = min(2, n)
    return list(range(2, hi + 1))


def cluster_layer(
    dm: DistanceMatrix, k_range: Sequence[int] | None = None
) -> LayerClusteringResult:
    """Full per-layer pipeline: dendrogram, cohesion curve, knee, assignment."""
    dendrogram = hac_ward(dm)
    ks = list(k_range) if k_range is not None else candidate_k_range(dm.n)
    ks = [k for k in ks if 1 <= k <= dm.n]
    if not ks:
        raise ValueError("no valid candidate cluster counts")
    curve = wicd_curve(dendrogram, dm, ks)
    if len(curve) == 1:
        knee = KneePoint(curve[0][0], weak=True)
    else:
        knee = knee_point(curve)
    assignment = cut(dendrogram, knee.k)
    square = dm.square()
    icds = _icds_fast(assignment, square)
    return LayerClusteringResult(
        layer=dm.layer,
        k=knee.k,
        assignment=assignment,
        icds=icds,
        wicd=_wicd_from_icds(assignment, icds),
        curve=curve,
        weak_knee=knee.weak,
    )


def select_root_cause_clusters(
    layer_heatmaps: Mapping[int, Mapping[int | str, np.ndarray]],
    k_range: Sequence[int] | None = None,
) -> RootCauseClusters:
    """Pick the layer whose knee-point clustering is most cohesive.

    ``layer_heatmaps`` maps a layer interface to its *normalized* heatmaps
    (image id -> matrix).  Layers are scanned from the deepest down so that
    an exact cohesion tie goes to the layer closest to the output.
    """
    if not layer_heatmaps:
        raise ValueError("no candidate layers given")
    best: LayerClusteringResult | None = None
    for layer in sorted(layer_heatmaps, reverse=True):
        maps = layer_heatmaps[layer]
        if len(maps) < 2:
            raise ValueError(f"layer {layer} has fewer than 2 error-inducing images")
        dm = distance_matrix(maps, layer=layer, normalized=True)
        result = cluster_layer(dm, k_range)
        logger.info("layer %d: k=%d wicd=%.6g", layer, result.k, result.wicd)
        if best is None or result.wicd < best.wicd:
            best = result
    assert best is not None
    return RootCauseClusters(best.layer, best)


def write_curves_csv(results: Sequence[LayerClusteringResult], path) -> None:
    """Cohesion curves of every candidate layer, long format for plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "k", "wicd"])
        for result in results:
            for k, value in result.curve:
                writer.writerow([result.layer, k, repr(value)])
