"""Evaluation harness: root-cause studies, retraining baselines and statistics.

Two entry points drive the synthetic scenario end to end:

* ``run_root_cause_study`` builds independent seeded scenarios, clusters
  their error-inducing images and scores how strongly each cluster
  concentrates the generator parameters (variance-reduction rates).
* ``run_experiment`` trains one base model, selects an unsafe set with the
  guided pipeline and retrains it against two baselines with equal label
  budgets over a list of seeds, reporting accuracies and effect sizes.

Baseline B1 retrains on the misclassified members of a labeled random
subset of the improvement set; baseline B2 retrains on the random subset
itself.  Both subsets match the guided unsafe-set size, and both
retraining sets are bootstrap-resampled up to the size of the balanced
unsafe set, so every method spends the same labeling and training budget.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .clustering import RootCauseClusters, select_root_cause_clusters
from .heatspace import improvement_distance_matrix, normalize_layer
from .lrp import HeatmapStore, heatmaps_for_set
from .micronet import (
    LabeledDataset,
    Network,
    TrainConfig,
    build_classifier,
    evaluate,
    train,
)
from .retraining import balance, build_union_dataset
from .selection import SelectionConfig, assign_unsafe, cluster_quotas, rank_clusters
from .synth import GeneratorSpec, Manifest, dataset_from_memory, generate

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(10))


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.__cause__ = cause


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc)


@dataclass(frozen=True)
class ExperimentConfig:
    """Sizes, hard-region mixes and training knobs of the synthetic scenario.

    Hard-region tuples give the (boundary-angle, occlusion, low-brightness)
    sample fractions of the respective split.
    """

    n_train: int = 2000
    n_test: int = 1200
    n_improvement: int = 2400
    train_hard: tuple[float, float, float] = (0.0, 0.0, 0.0)
    test_hard: tuple[float, float, float] = (0.15, 0.15, 0.15)
    improvement_hard: tuple[float, float, float] = (0.05, 0.05, 0.05)
    epochs: int = 24
    learning_rate: float = 0.08
    batch_size: int = 32
    retrain_epochs: int | None = 12
    retrain_learning_rate: float | None = 0.04
    sf: float = 0.3
    data_seed: int = 0
    model_seed: int = 0
    seeds: tuple[int, ...] = tuple(range(10))
    candidate_layers: tuple[int, ...] | None = None
    n_classes: int = 8

    def spec_for(self, hard: tuple[float, float, float]) -> GeneratorSpec:
        b, o, d = hard
        return GeneratorSpec(boundary_frac=b, occlusion_frac=o, dim_frac=d)

    def train_config(self, seed: int, warm_start: bool = True) -> TrainConfig:
        return TrainConfig(self.epochs, self.learning_rate, self.batch_size, seed, warm_start)

    def retrain_config(self, seed: int) -> TrainConfig:
        epochs = self.retrain_epochs if self.retrain_epochs is not None else self.epochs
        lr = self.retrain_learning_rate if self.retrain_learning_rate is not None else self.learning_rate
        return TrainConfig(epochs, lr, self.batch_size, seed, warm_start=True)


def default_candidate_interfaces(network: Network) -> list[int]:
    """Dense/conv output interfaces, without the output layer when possible.

    Internal layers abstract over the inputs; the final layer's heatmap is
    just the seed vector, so it is only kept when nothing else exists.
    """
    interfaces = network.parameterized_interfaces()
    return interfaces[:-1] if len(interfaces) > 1 else interfaces


def cluster_error_set(
    network: Network,
    dataset: LabeledDataset,
    error_ids: Sequence[str],
    candidate_layers: Sequence[int] | None = None,
    jobs: int = 1,
) -> tuple[RootCauseClusters, HeatmapStore]:
    """Heatmaps for the error-inducing images, then cross-layer clustering."""
    layers = (
        list(candidate_layers)
        if candidate_layers is not None
        else default_candidate_interfaces(network)
    )
    index = {i: k for k, i in enumerate(dataset.ids)}
    rows = [index[i] for i in error_ids]
    store = heatmaps_for_set(
        network, list(error_ids), dataset.images[rows], layers=layers, jobs=jobs
    )
    normalized = {
        layer: normalize_layer(store.layer_maps(layer), layer)[0] for layer in layers
    }
    return select_root_cause_clusters(normalized), store


# ---- RQ1-style measurements -------------------------------------------------


def variance_reduction(
    clusters: RootCauseClusters, manifest: Manifest, param: str
) -> dict[int, float | None]:
    """Per-cluster rate of variance reduction for one generator parameter.

    RR = 1 - var(param over the cluster) / var(param over the whole
    error-inducing set).  A zero whole-set variance makes the rate
    undefined (None).
    """
    all_ids = clusters.assignment.ids
    whole = float(np.var(manifest.values(param, ids=all_ids)))
    out: dict[int, float | None] = {}
    for c in range(clusters.k):
        if whole == 0.0:
            out[c] = None
            continue
        members = clusters.members(c)
        out[c] = 1.0 - float(np.var(manifest.values(param, ids=members))) / whole
    return out


def rr_table(
    clusters: RootCauseClusters, manifest: Manifest, params: Sequence[str] | None = None
) -> dict[int, dict[str, float | None]]:
    params = list(params) if params is not None else manifest.param_names()
    per_param = {p: variance_reduction(clusters, manifest, p) for p in params}
    return {c: {p: per_param[p][c] for p in params} for c in range(clusters.k)}


def threshold_profile(
    table: Mapping[int, Mapping[str, float | None]],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> list[tuple[float, float]]:
    """Percentage of clusters whose best parameter passes each threshold.

    At threshold 0.0 the reduction must be strictly positive; higher
    thresholds are inclusive.  The profile is non-increasing by set
    containment.
    """
    profile = []
    n = len(table)
    for t in thresholds:
        hits = 0
        for rrs in table.values():
            values = [v for v in rrs.values() if v is not None]
            if not values:
                continue
            best = max(values)
            if (best > 0.0) if t == 0.0 else (best >= t):
                hits += 1
        profile.append((float(t), 100.0 * hits / n if n else 0.0))
    return profile


# ---- baselines and statistics ----------------------------------------------


def bootstrap_to_size(ids: Sequence[str], target: int, rng: np.random.Generator) -> list[str]:
    """Keep every id once, then resample with replacement up to ``target``."""
    ids = list(ids)
    if not ids or target <= len(ids):
        return ids[: target if target >= 0 else 0] if ids else []
    extra = [ids[k] for k in rng.integers(0, len(ids), size=target - len(ids))]
    return ids + extra


def baseline_b1(
    subset: LabeledDataset, network: Network, target_size: int, seed: int
) -> list[str]:
    """Misclassified members of a labeled improvement subset, resampled."""
    report = evaluate(network, subset)
    errors = report.error_ids()
    if not errors:
        logger.warning("baseline B1 found no misclassified images; retraining set is empty")
        return []
    return bootstrap_to_size(errors, target_size, np.random.default_rng(seed))


def baseline_b2(
    ids: Sequence[str], budget: int, target_size: int, seed: int
) -> tuple[list[str], list[str]]:
    """Uniform random subset of ``budget`` ids, resampled to ``target_size``."""
    if budget > len(ids):
        raise ValueError(f"budget {budget} exceeds the improvement set size {len(ids)}")
    rng = np.random.default_rng(seed)
    subset = [ids[k] for k in rng.choice(len(ids), size=budget, replace=False)]
    return subset, bootstrap_to_size(subset, target_size, rng)


def vargha_delaney(samples_a: Sequence[float], samples_b: Sequence[float]) -> float:
    """A-hat-12 effect size: P(a > b) + 0.5 P(a == b) over all pairs."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    wins = (a[:, None] > b[None, :]).sum()
    ties = (a[:, None] == b[None, :]).sum()
    return float((wins + 0.5 * ties) / (a.size * b.size))


# ---- root-cause study (per-seed clustering quality) --------------------------


@dataclass
class SeedStudy:
    seed: int
    test_accuracy: float
    n_errors: int
    layer: int
    k: int
    rr: dict[int, dict[str, float | None]]


@dataclass
class RootCauseStudy:
    per_seed: list[SeedStudy]
    profile: list[tuple[float, float]]

    def pooled_rr(self) -> dict[int, dict[str, float | None]]:
        pooled = {}
        for study in self.per_seed:
            for c, rrs in study.rr.items():
                pooled[len(pooled)] = rrs
        return pooled

    def n_clusters(self) -> int:
        return sum(s.k for s in self.per_seed)


def run_root_cause_study(config: ExperimentConfig, jobs: int = 1) -> RootCauseStudy:
    """Independent scenario per seed: generate, train, cluster, score RR."""
    per_seed = []
    for seed in config.seeds:
        t0 = time.time()
        train_imgs, train_man = _stage(
            "generate",
            generate,
            config.spec_for(config.train_hard),
            config.n_train,
            seed=1000 + seed,
            prefix="tr",
        )
        test_imgs, test_man = _stage(
            "generate",
            generate,
            config.spec_for(config.test_hard),
            config.n_test,
            seed=2000 + seed,
            prefix="te",
        )
        train_ds = dataset_from_memory(train_imgs, train_man)
        test_ds = dataset_from_memory(test_imgs, test_man)
        base = build_classifier(config.n_classes, seed=config.model_seed + seed)
        model = _stage("train", train, base, train_ds, config.train_config(seed))
        report = _stage("evaluate", evaluate, model, test_ds)
        error_ids = report.error_ids()
        if len(error_ids) < 2:
            raise StageError("cluster", ValueError("fewer than 2 error-inducing images"))
        clusters, _ = _stage(
            "cluster", cluster_error_set, model, test_ds, error_ids,
            config.candidate_layers, jobs,
        )
        table = _stage("variance_reduction", rr_table, clusters, test_man)
        per_seed.append(
            SeedStudy(seed, report.accuracy, len(error_ids), clusters.layer, clusters.k, table)
        )
        logger.info(
            "seed %d: acc=%.3f errors=%d layer=%d k=%d (%.1fs)",
            seed, report.accuracy, len(error_ids), clusters.layer, clusters.k,
            time.time() - t0,
        )
    pooled: dict[int, dict[str, float | None]] = {}
    for study in per_seed:
        for rrs in study.rr.values():
            pooled[len(pooled)] = rrs
    return RootCauseStudy(per_seed, threshold_profile(pooled))


# ---- retraining experiment ---------------------------------------------------


@dataclass
class EvaluationReport:
    """Everything the retraining comparison produces, JSON/CSV exportable."""

    original_accuracy: float
    improvement_size: int
    unsafe_size: int
    balanced_size: int
    accuracies: dict[str, list[float]]
    label_budget: dict[str, int]
    a12: dict[str, float]
    rr: dict[int, dict[str, float | None]]
    profile: list[tuple[float, float]]
    cluster_summary: dict
    seeds: list[int] = field(default_factory=list)

    def improvements(self, method: str) -> list[float]:
        return [a - self.original_accuracy for a in self.accuracies[method]]

    def mean_accuracy(self, method: str) -> float:
        return float(np.mean(self.accuracies[method]))

    def to_json(self) -> str:
        payload = {
            "original_accuracy": self.original_accuracy,
            "sizes": {
                "improvement_set": self.improvement_size,
                "unsafe_set": self.unsafe_size,
                "balanced_unsafe_set": self.balanced_size,
            },
            "seeds": self.seeds,
            "accuracies": self.accuracies,
            "mean_accuracies": {m: self.mean_accuracy(m) for m in self.accuracies},
            "mean_improvements": {
                m: float(np.mean(self.improvements(m))) for m in self.accuracies
            },
            "label_budget": self.label_budget,
            "a12": self.a12,
            "variance_reduction": {
                str(c): rrs for c, rrs in self.rr.items()
            },
            "threshold_profile": self.profile,
            "clusters": self.cluster_summary,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(self.to_json())
        with open(directory / "accuracy_table.csv", "w", newline="") as fh:
            fh.write("method,seed,accuracy,improvement\n")
            for method, accs in self.accuracies.items():
                for seed, acc in zip(self.seeds, accs):
                    fh.write(f"{method},{seed},{acc!r},{acc - self.original_accuracy!r}\n")
        with open(directory / "summary.csv", "w", newline="") as fh:
            fh.write(
                "improvement_set,unsafe_set,balanced_unsafe_set,original_accuracy,"
                "guided_mean,b1_mean,b2_mean,a12_vs_b1,a12_vs_b2\n"
            )
            fh.write(
                f"{self.improvement_size},{self.unsafe_size},{self.balanced_size},"
                f"{self.original_accuracy!r},{self.mean_accuracy('guided')!r},"
                f"{self.mean_accuracy('b1')!r},{self.mean_accuracy('b2')!r},"
                f"{self.a12['b1']!r},{self.a12['b2']!r}\n"
            )


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> EvaluationReport:
    """Base model, guided unsafe-set selection, and seeded method comparison."""
    train_imgs, train_man = _stage(
        "generate", generate, config.spec_for(config.train_hard),
        config.n_train, seed=1000 + config.data_seed, prefix="tr",
    )
    test_imgs, test_man = _stage(
        "generate", generate, config.spec_for(config.test_hard),
        config.n_test, seed=2000 + config.data_seed, prefix="te",
    )
    imp_imgs, imp_man = _stage(
        "generate", generate, config.spec_for(config.improvement_hard),
        config.n_improvement, seed=3000 + config.data_seed, prefix="im",
    )
    train_ds = dataset_from_memory(train_imgs, train_man)
    test_ds = dataset_from_memory(test_imgs, test_man)

    base = build_classifier(config.n_classes, seed=config.model_seed)
    model = _stage("train", train, base, train_ds, config.train_config(config.data_seed))
    report = _stage("evaluate", evaluate, model, test_ds)
    error_ids = report.error_ids()
    logger.info("base accuracy %.4f, %d error-inducing images", report.accuracy, len(error_ids))
    if len(error_ids) < 2:
        raise StageError("cluster", ValueError("fewer than 2 error-inducing images"))

    clusters, store = _stage(
        "cluster", cluster_error_set, model, test_ds, error_ids,
        config.candidate_layers, jobs,
    )

    quotas = _stage(
        "select",
        cluster_quotas,
        SelectionConfig(config.sf, config.n_test, report.accuracy),
        clusters.cluster_sizes(),
    )
    imp_ids = imp_man.ids()
    imp_store = _stage(
        "select", heatmaps_for_set, model, imp_ids, imp_imgs,
        "predicted_class", None, [clusters.layer], jobs,
    )
    rect = _stage(
        "select",
        improvement_distance_matrix,
        imp_store.layer_maps(clusters.layer),
        store.layer_maps(clusters.layer),
        clusters.layer,
    )
    ranks = _stage("select", rank_clusters, rect, clusters)
    unsafe = _stage("select", assign_unsafe, ranks, quotas)
    n_selected = unsafe.count()
    logger.info("unsafe set: %d images over %d clusters", n_selected, clusters.k)
    if n_selected == 0:
        raise StageError("select", ValueError("empty unsafe set: nothing to retrain on"))

    imp_labels = {r.id: r.label for r in imp_man.rows}
    imp_pixels = {imp_ids[i]: imp_imgs[i] for i in range(len(imp_ids))}

    accuracies: dict[str, list[float]] = {"guided": [], "b1": [], "b2": []}
    balanced_size = 0
    for seed in config.seeds:
        balanced = _stage("retrain", balance, unsafe, seed)
        balanced_size = balanced.size()
        union = build_union_dataset(train_ds, balanced, imp_pixels, imp_labels)
        retrained = _stage("retrain", train, model, union, config.retrain_config(seed))
        accuracies["guided"].append(evaluate(retrained, test_ds).accuracy)

        reduced_ids, b2_multiset = _stage(
            "baseline", baseline_b2, imp_ids, n_selected, balanced_size, seed
        )
        imp_index = {i: k for k, i in enumerate(imp_ids)}
        reduced_rows = [imp_index[i] for i in reduced_ids]
        reduced_ds = LabeledDataset(
            reduced_ids,
            imp_imgs[reduced_rows],
            np.array([imp_labels[i] for i in reduced_ids], dtype=np.int64),
        )
        b1_multiset = _stage("baseline", baseline_b1, reduced_ds, model, balanced_size, seed)
        for method, multiset in (("b1", b1_multiset), ("b2", b2_multiset)):
            extra = LabeledDataset(
                multiset,
                np.stack([imp_pixels[i] for i in multiset]) if multiset else
                np.zeros((0,) + train_ds.images.shape[1:]),
                np.array([imp_labels[i] for i in multiset], dtype=np.int64),
            )
            union_b = train_ds.concat(extra) if len(extra) else train_ds
            retrained_b = _stage("baseline", train, model, union_b, config.retrain_config(seed))
            accuracies[method].append(evaluate(retrained_b, test_ds).accuracy)
        logger.info(
            "seed %d: guided=%.4f b1=%.4f b2=%.4f",
            seed, accuracies["guided"][-1], accuracies["b1"][-1], accuracies["b2"][-1],
        )

    table = _stage("variance_reduction", rr_table, clusters, test_man)
    return EvaluationReport(
        original_accuracy=report.accuracy,
        improvement_size=config.n_improvement,
        unsafe_size=n_selected,
        balanced_size=balanced_size,
        accuracies=accuracies,
        label_budget={"guided": n_selected, "b1": n_selected, "b2": n_selected},
        a12={
            "b1": vargha_delaney(accuracies["guided"], accuracies["b1"]),
            "b2": vargha_delaney(accuracies["guided"], accuracies["b2"]),
        },
        rr=table,
        profile=threshold_profile(table),
        cluster_summary=clusters.summary(),
        seeds=list(config.seeds),
    )
