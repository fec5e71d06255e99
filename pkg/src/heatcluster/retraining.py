"""Bootstrap balancing of the labeled unsafe set and warm-started retraining.

Rare root causes contribute few unsafe images; resampling each cluster
with replacement up to the largest cluster's size gives every cause equal
weight during retraining.  The retrained model starts from the current
weights and trains on the original training set plus the balanced set, so
accuracy on already-safe inputs is preserved.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .micronet import LabeledDataset, Network, TrainConfig, train
from .selection import UnsafeSet

logger = logging.getLogger(__name__)


@dataclass
class BalancedUnsafeSet:
    """Per-cluster multisets of image ids, all equally sized after balancing."""

    clusters: dict[int, list[str]]

    def size(self) -> int:
        return sum(len(v) for v in self.clusters.values())

    def all_image_ids(self) -> list[str]:
        return [i for c in sorted(self.clusters) for i in self.clusters[c]]


def balance(unsafe: UnsafeSet, seed: int = 0) -> BalancedUnsafeSet:
    """Resample every nonempty cluster with replacement up to the max size.

    Original members are kept exactly once before any duplicates are drawn,
    so each appears at least once.  Empty clusters (zero quota or total
    shortfall) are skipped with a warning.
    """
    members = {c: unsafe.image_ids(c) for c in sorted(unsafe.selected)}
    nonempty = {c: ids for c, ids in members.items() if ids}
    if not nonempty:
        raise ValueError("all clusters are empty, nothing to balance")
    for c in members:
        if c not in nonempty:
            logger.warning("cluster %d is empty and is skipped during balancing", c)
    target = max(len(ids) for ids in nonempty.values())
    rng = np.random.default_rng(seed)
    balanced = {}
    for c, ids in nonempty.items():
        extra = target - len(ids)
        dupes = [ids[k] for k in rng.integers(0, len(ids), size=extra)]
        balanced[c] = list(ids) + dupes
    return BalancedUnsafeSet(balanced)


def read_labels_csv(path) -> dict[str, int]:
    """Parse an ``image_id,label`` CSV, the hand-off from the labeling step."""
    labels = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels[row["image_id"]] = int(row["label"])
    return labels


def build_union_dataset(
    original: LabeledDataset,
    balanced: BalancedUnsafeSet,
    images: Mapping[str, np.ndarray],
    labels: Mapping[str, int],
) -> LabeledDataset:
    """Original training set (exactly once) plus every balanced occurrence."""
    extra_ids = balanced.all_image_ids()
    missing_labels = [i for i in set(extra_ids) if i not in labels]
    if missing_labels:
        raise ValueError(f"label missing for unsafe images: {sorted(missing_labels)[:5]}")
    missing_images = [i for i in set(extra_ids) if i not in images]
    if missing_images:
        raise ValueError(f"pixel data missing for unsafe images: {sorted(missing_images)[:5]}")
    if not extra_ids:
        return original
    extra = LabeledDataset(
        list(extra_ids),
        np.stack([images[i] for i in extra_ids]),
        np.array([labels[i] for i in extra_ids], dtype=np.int64),
        original.task,
    )
    return original.concat(extra)


def retrain(
    network: Network,
    original_train: LabeledDataset,
    balanced: BalancedUnsafeSet,
    images: Mapping[str, np.ndarray],
    labels: Mapping[str, int],
    config: TrainConfig,
) -> Network:
    """Warm-started training on the union of original and balanced unsafe data."""
    union = build_union_dataset(original_train, balanced, images, labels)
    return train(network, union, config)
