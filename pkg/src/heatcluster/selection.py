"""Assignment of improvement-set images to root-cause clusters under quotas.

Each cluster receives a quota proportional to its share of the
error-inducing test set, scaled by the labeling budget and the test-set
error rate.  Improvement images rank all clusters by single-linkage
distance (closest member), and a rank sweep assigns every image to its
closest not-yet-full cluster: rank 1 first, nearer images first within a
rank, so spurious clusters that fill up early cannot swallow images that
genuinely belong elsewhere.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .clustering import RootCauseClusters
from .heatspace import RectDistanceMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionConfig:
    """Labeling-budget knobs: selection factor, test-set size and accuracy."""

    sf: float
    size_ts: int
    acc_ts: float

    def __post_init__(self):
        if not 0.0 <= self.sf <= 1.0:
            raise ValueError("selection factor must lie in [0, 1]")
        if self.size_ts < 1:
            raise ValueError("test-set size must be positive")
        if not 0.0 <= self.acc_ts <= 1.0:
            raise ValueError("test-set accuracy must lie in [0, 1]")


def cluster_quotas(
    config: SelectionConfig, cluster_sizes: Mapping[int, int]
) -> dict[int, int]:
    """Per-cluster image quotas.

    The raw quota of cluster i is ``size_ts * sf * (1 - acc_ts) * |C_i|/|C|``.
    Integer quotas floor each raw value, then hand out the units missing
    from ``round(sum of raw quotas)`` one at a time by descending
    fractional part (ties to the lower cluster id), so the rounded total
    stays within one unit per cluster of the exact budget.
    """
    if not cluster_sizes:
        raise ValueError("no clusters given")
    total = sum(cluster_sizes.values())
    if total <= 0:
        raise ValueError("clusters are empty")
    budget = config.size_ts * config.sf * (1.0 - config.acc_ts)
    if config.acc_ts == 1.0:
        logger.warning("test-set accuracy is 1.0: no errors to target, all quotas are zero")
        return {c: 0 for c in cluster_sizes}
    raw = {c: budget * size / total for c, size in cluster_sizes.items()}
    quotas = {c: int(np.floor(v)) for c, v in raw.items()}
    remainder = int(round(sum(raw.values()))) - sum(quotas.values())
    by_fraction = sorted(raw, key=lambda c: (-(raw[c] - quotas[c]), c))
    for c in by_fraction[:remainder]:
        quotas[c] += 1
    return quotas


@dataclass
class RankTable:
    """Per improvement image: all clusters ordered by single-linkage distance."""

    ranked: dict[str, list[tuple[int, float]]]

    def __post_init__(self):
        for image_id, entries in self.ranked.items():
            dists = [d for _, d in entries]
            if any(b < a for a, b in zip(dists, dists[1:])):
                raise ValueError(f"ranking for {image_id!r} is not sorted by distance")

    def n_ranks(self) -> int:
        return max((len(v) for v in self.ranked.values()), default=0)

    def at_rank(self, image_id: str, rank: int) -> tuple[int, float]:
        return self.ranked[image_id][rank - 1]


def rank_clusters(dm_is: RectDistanceMatrix, clusters: RootCauseClusters) -> RankTable:
    """Single-linkage cluster ranking for every improvement image.

    An image's distance to a cluster is the distance to the cluster's
    closest error-inducing member.  Clusters sort ascending by that
    distance, ties towards the lower cluster id.
    """
    member_columns: dict[int, np.ndarray] = {}
    for c in range(clusters.k):
        members = clusters.members(c)
        if not members:
            raise ValueError(f"cluster {c} has no members")
        try:
            member_columns[c] = np.array([dm_is.col_index[m] for m in members])
        except KeyError as exc:
            raise ValueError(f"distance matrix misses cluster member {exc}")
    ranked = {}
    for row, image_id in enumerate(dm_is.row_ids):
        dists = dm_is.values[row]
        per_cluster = [(c, float(dists[cols].min())) for c, cols in member_columns.items()]
        per_cluster.sort(key=lambda e: (e[1], e[0]))
        ranked[image_id] = per_cluster
    return RankTable(ranked)


@dataclass
class Selected:
    image_id: str
    rank: int
    distance: float


@dataclass
class UnsafeSet:
    """Selected improvement images per cluster, with the quotas that bound them."""

    quotas: dict[int, int]
    selected: dict[int, list[Selected]]

    def count(self) -> int:
        return sum(len(v) for v in self.selected.values())

    def image_ids(self, cluster: int) -> list[str]:
        return [s.image_id for s in self.selected[cluster]]

    def all_image_ids(self) -> list[str]:
        return [s.image_id for c in sorted(self.selected) for s in self.selected[c]]

    def shortfall(self) -> dict[int, int]:
        return {
            c: self.quotas[c] - len(self.selected[c])
            for c in self.quotas
            if len(self.selected[c]) < self.quotas[c]
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "cluster_id", "rank", "distance"])
            for c in sorted(self.selected):
                for s in self.selected[c]:
                    writer.writerow([s.image_id, c, s.rank, repr(s.distance)])

    def write_summary(self, path) -> None:
        payload = {
            "quotas": {str(c): q for c, q in self.quotas.items()},
            "selected_counts": {str(c): len(v) for c, v in self.selected.items()},
            "total_selected": self.count(),
            "shortfall": {str(c): v for c, v in self.shortfall().items()},
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def assign_unsafe(ranks: RankTable, quotas: Mapping[int, int]) -> UnsafeSet:
    """Rank sweep: assign each image to its closest cluster with room left.

    Rank r = 1, 2, ... in turn; within a rank, images are processed in
    ascending order of their distance at that rank (ties to the lower
    image id).  An image joins its rank-r cluster only while the cluster
    is below quota; once assigned it leaves all later rounds.  Images
    whose every ranked cluster filled up stay unassigned, reported as a
    shortfall rather than an error.
    """
    selected: dict[int, list[Selected]] = {c: [] for c in quotas}
    remaining = list(ranks.ranked)
    for rank in range(1, ranks.n_ranks() + 1):
        in_order = sorted(
            (image_id for image_id in remaining if len(ranks.ranked[image_id]) >= rank),
            key=lambda image_id: (ranks.at_rank(image_id, rank)[1], image_id),
        )
        still_waiting = set(remaining)
        for image_id in in_order:
            cluster, distance = ranks.at_rank(image_id, rank)
            # A cluster without a quota entry is simply always full.
            if len(selected.setdefault(cluster, [])) < quotas.get(cluster, 0):
                selected[cluster].append(Selected(image_id, rank, distance))
                still_waiting.discard(image_id)
        remaining = [i for i in remaining if i in still_waiting]
        if not remaining:
            break
    return UnsafeSet(dict(quotas), selected)
