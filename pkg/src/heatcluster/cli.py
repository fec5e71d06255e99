"""Command-line pipeline: each subcommand runs one automated stage.

Stages read and write artifacts under a run directory::

    runs/<name>/
      model/       model.net, eval.json
      heatmaps/    layer_<i>.hm for the error-inducing test images
      distances/   per-layer packed matrices, improvement rectangle
      clusters/    clusters.csv, summary.json, curves.csv
      unsafe/      unsafe.csv, summary.json
      retrained/   model.net, report.json
      reports/     cluster_<c>.png / .gif
      manifests/   one JSON per completed stage

Every stage records a manifest of its parameters plus input/output file
hashes; rerunning a stage whose manifest still matches is a no-op.  The
human steps of the workflow are file hand-offs: cluster reports go out for
inspection, an improvement-set directory comes in, and a labels CSV comes
in before retraining (synthetic datasets label themselves through their
manifest).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import harness, micronet
from .clustering import RootCauseClusters, cluster_layer, write_curves_csv
from .heatspace import distance_matrix, improvement_distance_matrix, normalize_layer
from .lrp import HeatmapStore, heatmaps_for_set
from .micronet import TrainConfig, build_classifier, evaluate, load, save, train
from .retraining import balance, build_union_dataset, read_labels_csv
from .reports import cluster_reports
from .selection import SelectionConfig, assign_unsafe, cluster_quotas, rank_clusters
from .synth import GeneratorSpec, Manifest, generate, load_dataset

STAGE_DIRS = (
    "model",
    "heatmaps",
    "distances",
    "clusters",
    "unsafe",
    "retrained",
    "reports",
    "manifests",
)

#: Published configuration schema: key -> (type, default).  ``None`` defaults
#: mean "required" for paths the stages actually touch.
CONFIG_SCHEMA = {
    "run_dir": ("str", None),
    "data.train_dir": ("str", None),
    "data.test_dir": ("str", None),
    "data.improvement_dir": ("str", None),
    "data.generator.seed": ("int", 0),
    "data.generator.n_train": ("int", 2000),
    "data.generator.n_test": ("int", 1200),
    "data.generator.n_improvement": ("int", 2400),
    "data.generator.train_hard": ("[float,float,float]", [0.0, 0.0, 0.0]),
    "data.generator.test_hard": ("[float,float,float]", [0.15, 0.15, 0.15]),
    "data.generator.improvement_hard": ("[float,float,float]", [0.05, 0.05, 0.05]),
    "model.classes": ("int", 8),
    "model.init_seed": ("int", 0),
    "train.epochs": ("int", 24),
    "train.learning_rate": ("float", 0.08),
    "train.batch_size": ("int", 32),
    "train.seed": ("int", 0),
    "selection.sf": ("float", 0.3),
    "clustering.layers": ("[int] | null", None),
    "clustering.max_k": ("int", 50),
    "retrain.epochs": ("int | null", 12),
    "retrain.learning_rate": ("float | null", 0.04),
    "retrain.seed": ("int", 0),
    "report.images_per_sheet": ("int", 25),
    "report.columns": ("int", 5),
    "report.gif": ("bool", False),
    "report.images_per_minute": ("float", 100.0),
    "experiment.seeds": ("[int]", list(range(10))),
    "jobs": ("int", 1),
}


class ConfigError(ValueError):
    pass


class StageDependencyError(RuntimeError):
    pass


def _get(cfg: dict, dotted: str, default=None):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def load_config(path) -> dict:
    """Parse and fully validate a run configuration before any stage runs."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")

    errors = []

    def want(dotted, kind, default=None, required=False):
        value = _get(cfg, dotted)
        if value is None:
            if required:
                errors.append(f"{dotted}: required")
            return default
        ok = {
            "str": lambda v: isinstance(v, str) and v,
            "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
            "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
            "bool": lambda v: isinstance(v, bool),
            "intlist": lambda v: isinstance(v, list)
            and all(isinstance(x, int) and not isinstance(x, bool) for x in v),
            "frac3": lambda v: isinstance(v, list)
            and len(v) == 3
            and all(isinstance(x, (int, float)) and 0 <= x <= 1 for x in v),
        }[kind](value)
        if not ok:
            errors.append(f"{dotted}: expected {kind}, got {value!r}")
            return default
        return value

    out = {
        "run_dir": want("run_dir", "str", required=True),
        "train_dir": want("data.train_dir", "str", required=True),
        "test_dir": want("data.test_dir", "str", required=True),
        "improvement_dir": want("data.improvement_dir", "str", required=True),
        "gen_seed": want("data.generator.seed", "int", 0),
        "n_train": want("data.generator.n_train", "int", 2000),
        "n_test": want("data.generator.n_test", "int", 1200),
        "n_improvement": want("data.generator.n_improvement", "int", 2400),
        "train_hard": want("data.generator.train_hard", "frac3", [0.0, 0.0, 0.0]),
        "test_hard": want("data.generator.test_hard", "frac3", [0.15, 0.15, 0.15]),
        "improvement_hard": want(
            "data.generator.improvement_hard", "frac3", [0.05, 0.05, 0.05]
        ),
        "classes": want("model.classes", "int", 8),
        "init_seed": want("model.init_seed", "int", 0),
        "epochs": want("train.epochs", "int", 24),
        "learning_rate": want("train.learning_rate", "float", 0.08),
        "batch_size": want("train.batch_size", "int", 32),
        "train_seed": want("train.seed", "int", 0),
        "sf": want("selection.sf", "float", 0.3),
        "layers": want("clustering.layers", "intlist", None)
        if _get(cfg, "clustering.layers") is not None
        else None,
        "max_k": want("clustering.max_k", "int", 50),
        "retrain_epochs": want("retrain.epochs", "int", 12)
        if _get(cfg, "retrain.epochs") is not None
        else 12,
        "retrain_lr": want("retrain.learning_rate", "float", 0.04)
        if _get(cfg, "retrain.learning_rate") is not None
        else 0.04,
        "retrain_seed": want("retrain.seed", "int", 0),
        "images_per_sheet": want("report.images_per_sheet", "int", 25),
        "columns": want("report.columns", "int", 5),
        "gif": want("report.gif", "bool", False),
        "images_per_minute": want("report.images_per_minute", "float", 100.0),
        "seeds": want("experiment.seeds", "intlist", list(range(10))),
        "jobs": want("jobs", "int", 1),
    }
    for key in ("n_train", "n_test", "n_improvement", "classes", "epochs", "batch_size"):
        if out.get(key) is not None and out[key] < 1:
            errors.append(f"{key}: must be positive")
    if out["learning_rate"] is not None and out["learning_rate"] <= 0:
        errors.append("train.learning_rate: must be positive")
    if out["sf"] is not None and not 0 <= out["sf"] <= 1:
        errors.append("selection.sf: must lie in [0, 1]")
    if out["jobs"] is not None and out["jobs"] < 1:
        errors.append("jobs: must be >= 1")
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return out


# ---- stage manifests --------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_files(run_dir: Path, paths: list[Path]) -> dict[str, str]:
    out = {}
    for p in paths:
        try:
            rel = str(p.relative_to(run_dir))
        except ValueError:
            rel = str(p)
        out[rel] = _sha256(p)
    return out


def _manifest_path(run_dir: Path, stage: str) -> Path:
    return run_dir / "manifests" / f"{stage}.json"


def stage_is_current(run_dir: Path, stage: str, params: dict, inputs: list[Path]) -> bool:
    manifest_file = _manifest_path(run_dir, stage)
    if not manifest_file.exists():
        return False
    try:
        manifest = json.loads(manifest_file.read_text())
    except json.JSONDecodeError:
        return False
    if manifest.get("params") != json.loads(json.dumps(params)):
        return False
    if any(not p.exists() for p in inputs):
        return False
    if manifest.get("inputs") != _hash_files(run_dir, inputs):
        return False
    outputs = manifest.get("outputs", {})
    for rel, digest in outputs.items():
        path = run_dir / rel
        if not path.exists() or _sha256(path) != digest:
            return False
    return True


def record_stage(
    run_dir: Path,
    stage: str,
    params: dict,
    inputs: list[Path],
    outputs: list[Path],
    started: float,
) -> None:
    payload = {
        "stage": stage,
        "params": params,
        "inputs": _hash_files(run_dir, inputs),
        "outputs": _hash_files(run_dir, outputs),
        "duration_s": round(time.time() - started, 3),
        "completed_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    _manifest_path(run_dir, stage).write_text(json.dumps(payload, indent=2, sort_keys=True))


def _prepare_run_dir(cfg: dict) -> Path:
    run_dir = Path(cfg["run_dir"])
    for sub in STAGE_DIRS:
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    return run_dir


def _need(path: Path, what: str, producer: str) -> Path:
    if not path.exists():
        raise StageDependencyError(
            f"{what} not found at {path}; run 'heatcluster {producer}' first"
        )
    return path


# ---- stages -----------------------------------------------------------------


def cmd_generate(cfg: dict) -> int:
    run_dir = _prepare_run_dir(cfg)
    started = time.time()
    params = {k: cfg[k] for k in (
        "gen_seed", "n_train", "n_test", "n_improvement",
        "train_hard", "test_hard", "improvement_hard",
    )}
    outputs = [Path(cfg[d]) / "manifest.csv" for d in ("train_dir", "test_dir", "improvement_dir")]
    if stage_is_current(run_dir, "generate", params, []) and all(p.exists() for p in outputs):
        print("[generate] up to date, skipped")
        return 0
    jobs = (
        ("train_dir", cfg["n_train"], cfg["train_hard"], 1000, "tr"),
        ("test_dir", cfg["n_test"], cfg["test_hard"], 2000, "te"),
        ("improvement_dir", cfg["n_improvement"], cfg["improvement_hard"], 3000, "im"),
    )
    for dir_key, n, hard, offset, prefix in jobs:
        spec = GeneratorSpec(
            boundary_frac=hard[0], occlusion_frac=hard[1], dim_frac=hard[2]
        )
        generate(spec, n, seed=offset + cfg["gen_seed"], directory=cfg[dir_key], prefix=prefix)
        print(f"[generate] wrote {n} images to {cfg[dir_key]}")
    record_stage(run_dir, "generate", params, [], outputs, started)
    return 0


def cmd_train(cfg: dict) -> int:
    run_dir = _prepare_run_dir(cfg)
    started = time.time()
    train_manifest = _need(
        Path(cfg["train_dir"]) / "manifest.csv", "training dataset", "generate"
    )
    model_path = run_dir / "model" / "model.net"
    params = {k: cfg[k] for k in (
        "classes", "init_seed", "epochs", "learning_rate", "batch_size", "train_seed",
    )}
    if stage_is_current(run_dir, "train", params, [train_manifest]):
        print("[train] up to date, skipped")
        return 0
    dataset, _ = load_dataset(cfg["train_dir"])
    net = build_classifier(cfg["classes"], seed=cfg["init_seed"])
    net = train(
        net,
        dataset,
        TrainConfig(cfg["epochs"], cfg["learning_rate"], cfg["batch_size"], cfg["train_seed"]),
    )
    save(net, model_path)
    report = evaluate(net, dataset)
    print(f"[train] model written to {model_path} (training accuracy {report.accuracy:.4f})")
    record_stage(run_dir, "train", params, [train_manifest], [model_path], started)
    return 0


def cmd_eval(cfg: dict) -> int:
    run_dir = _prepare_run_dir(cfg)
    started = time.time()
    model_path = _need(run_dir / "model" / "model.net", "model file", "train")
    test_manifest = _need(Path(cfg["test_dir"]) / "manifest.csv", "test dataset", "generate")
    eval_path = run_dir / "model" / "eval.json"
    params: dict = {}
    if stage_is_current(run_dir, "eval", params, [model_path, test_manifest]):
        print("[eval] up to date, skipped")
        return 0
    net = load(model_path)
    dataset, _ = load_dataset(cfg["test_dir"])
    report = evaluate(net, dataset)
    payload = {
        "accuracy": report.accuracy,
        "n_images": len(dataset),
        "error_ids": report.error_ids(),
    }
    eval_path.write_text(json.dumps(payload, indent=2))
    print(
        f"[eval] accuracy {report.accuracy:.4f}, "
        f"{len(payload['error_ids'])} error-inducing images -> {eval_path}"
    )
    record_stage(run_dir, "eval", params, [model_path, test_manifest], [eval_path], started)
    return 0


def _candidate_layers(cfg: dict, net) -> list[int]:
    if cfg["layers"] is not None:
        bad = [l for l in cfg["layers"] if not 1 <= l <= len(net.layers)]
        if bad:
            raise ConfigError(f"clustering.layers out of range: {bad}")
        return list(cfg["layers"])
    return harness.default_candidate_interfaces(net)


def cmd_heatmaps(cfg: dict) -> int:
    run_dir = _prepare_run_dir(cfg)
    started = time.time()
    model_path = _need(run_dir / "model" / "model.net", "model file", "train")
    eval_path = _need(run_dir / "model" / "eval.json", "evaluation report", "eval")
    test_manifest = _need(Path(cfg["test_dir"]) / "manifest.csv", "test dataset", "generate")
    params = {"layers": cfg["layers"], "jobs": cfg["jobs"]}
    inputs = [model_path, eval_path, test_manifest]
    if stage_is_current(run_dir, "heatmaps", params, inputs):
        print("[heatmaps] up to date, skipped")
        return 0
    net = load(model_path)
    dataset, _ = load_dataset(cfg["test_dir"])
    error_ids = json.loads(eval_path.read_text())["error_ids"]
    if len(error_ids) < 2:
        raise StageDependencyError(
            "fewer than 2 error-inducing images; nothing to cluster"
        )
    layers = _candidate_layers(cfg, net)
    index = {i: k for k, i in enumerate(dataset.ids)}
    rows = [index[i] for i in error_ids]
    store = heatmaps_for_set(
        net, error_ids, dataset.images[rows], layers=layers, jobs=cfg["jobs"]
    )
    written = store.save(run_dir / "heatmaps")
    print(f"[heatmaps] {store.count()} heatmaps over layers {layers} -> {len(written)} files")
    record_stage(run_dir, "heatmaps", params, inputs, written, started)
    return 0


def cmd_cluster(cfg: dict) -> int:
    run_dir = _prepare_run_dir(cfg)
    started = time.time()
    heatmap_files = sorted((run_dir / "heatmaps").glob("layer_*.hm"))
    if not heatmap_files:
        raise StageDependencyError(
            f"no heatmap files under {run_dir / 'heatmaps'}; run 'heatcluster heatmaps' first"
        )
    params = {"max_k": cfg["max_k"]}
    if stage_is_current(run_dir, "cluster", params, heatmap_files):
        print("[cluster] up to date, skipped")
        return 0
    store = HeatmapStore.load(run_dir / "heatmaps")
    results = []
    best = None
    for layer in sorted(store.layers(), reverse=True):
        normed, _ = normalize_layer(store.layer_maps(layer), layer)
        dm = distance_matrix(normed, layer=layer, normalized=True)
        dm.save(run_dir / "distances" / f"layer_{layer:03d}.dm")
        ks = [k for k in range(2, min(dm.n - 1, cfg["max_k"]) + 1)] or [2]
        result = cluster_layer(dm, ks)
        results.append(result)
        if best is None or result.wicd < best.wicd:
            best = result
    clusters = RootCauseClusters(best.layer, best)
    clusters.write_csv(run_dir / "clusters" / "clusters.csv")
    clusters.write_summary(run_dir / "clusters" / "summary.json")
    write_curves_csv(results, run_dir / "clusters" / "curves.csv")
    outputs = [
        run_dir / "clusters" / "clusters.csv",
        run_dir / "clusters" / "summary.json",
        run_dir / "clusters" / "curves.csv",
    ]
    print(
        f"[cluster] winning layer {clusters.layer} with k={clusters.k} "
        f"(wicd {clusters.result.wicd:.6g}) -> {outputs[0]}"
    )
    record_stage(run_dir, "cluster", params, heatmap_files, outputs, started)
    return 0


def _load_clusters(run_dir: Path) -> RootCauseClusters:
    import csv as _csv

    summary_path = _need(run_dir / "clusters" / "summary.json", "cluster summary", "cluster")
    csv_path = _need(run_dir / "clusters" / "clusters.csv", "cluster table", "cluster")
    summary = json.loads(summary_path.read_text())
    ids, labels = [], []
    with open(csv_path, newline="") as fh:
        for row in _csv.DictReader(fh):
            ids.append(row["image_id"])
            labels.append(int(row["cluster_id"]))
    from .clustering import ClusterAssignment, LayerClusteringResult

    assignment = ClusterAssignment(ids, np.array(labels), int(summary["k"]))
    result = LayerClusteringResult(
        layer=int(summary["layer"]),
        k=int(summary["k"]),
        assignment=assignment,
        icds={int(c): v for c, v in summary["cluster_icds"].items()},
        wicd=float(summary["wicd"]),
        curve=[],
        weak_knee=bool(summary.get("weak_knee", False)),
    )
    return RootCauseClusters(int(summary["layer"]), result)


def cmd_select(cfg: dict) -> int:
    run_dir = _prepare_run_dir(cfg)
    started = time.time()
    model_path = _need(run_dir / "model" / "model.net", "model file", "train")
    eval_path = _need(run_dir / "model" / "eval.json", "evaluation report", "eval")
    clusters_csv = _need(run_dir / "clusters" / "clusters.csv", "cluster table", "cluster")
    summary_path = run_dir / "clusters" / "summary.json"
    imp_manifest = _need(
        Path(cfg["improvement_dir"]) / "manifest.csv", "improvement dataset", "generate"
    )
    params = {"sf": cfg["sf"], "jobs": cfg["jobs"]}
    inputs = [model_path, eval_path, clusters_csv, summary_path, imp_manifest]
    if stage_is_current(run_dir, "select", params, inputs):
        print("[select] up to date, skipped")
        return 0
    clusters = _load_clusters(run_dir)
    accuracy = json.loads(eval_path.read_text())["accuracy"]
    quotas = cluster_quotas(
        SelectionConfig(cfg["sf"], json.loads(eval_path.read_text())["n_images"], accuracy),
        clusters.cluster_sizes(),
    )
    store = HeatmapStore.load(run_dir / "heatmaps")
    if clusters.layer not in store.layers():
        raise StageDependencyError(
            f"heatmap store misses winning layer {clusters.layer}; rerun 'heatcluster heatmaps'"
        )
    net = load(model_path)
    imp_ds, _ = load_dataset(cfg["improvement_dir"])
    imp_store = heatmaps_for_set(
        net, imp_ds.ids, imp_ds.images, layers=[clusters.layer], jobs=cfg["jobs"]
    )
    rect = improvement_distance_matrix(
        imp_store.layer_maps(clusters.layer),
        store.layer_maps(clusters.layer),
        clusters.layer,
    )
    rect.save(run_dir / "distances" / "improvement.dm")
    unsafe = assign_unsafe(rank_clusters(rect, clusters), quotas)
    unsafe.write_csv(run_dir / "unsafe" / "unsafe.csv")
    unsafe.write_summary(run_dir / "unsafe" / "summary.json")
    outputs = [run_dir / "unsafe" / "unsafe.csv", run_dir / "unsafe" / "summary.json"]
    print(
        f"[select] {unsafe.count()} unsafe images "
        f"(budget {sum(quotas.values())}) -> {outputs[0]}"
    )
    record_stage(run_dir, "select", params, inputs, outputs, started)
    return 0


def cmd_retrain(cfg: dict, labels_path: str | None = None) -> int:
    run_dir = _prepare_run_dir(cfg)
    started = time.time()
    model_path = _need(run_dir / "model" / "model.net", "model file", "train")
    unsafe_csv = _need(run_dir / "unsafe" / "unsafe.csv", "unsafe set", "select")
    train_manifest = _need(
        Path(cfg["train_dir"]) / "manifest.csv", "training dataset", "generate"
    )
    imp_manifest = _need(
        Path(cfg["improvement_dir"]) / "manifest.csv", "improvement dataset", "generate"
    )
    params = {
        "retrain_epochs": cfg["retrain_epochs"],
        "retrain_seed": cfg["retrain_seed"],
        "labels": labels_path,
        "learning_rate": cfg["retrain_lr"],
        "batch_size": cfg["batch_size"],
    }
    inputs = [model_path, unsafe_csv, train_manifest, imp_manifest]
    if labels_path is not None:
        inputs.append(Path(labels_path))
    retrained_path = run_dir / "retrained" / "model.net"
    report_path = run_dir / "retrained" / "report.json"
    if stage_is_current(run_dir, "retrain", params, inputs):
        print("[retrain] up to date, skipped")
        return 0

    import csv as _csv

    selected: dict[int, list[str]] = {}
    with open(unsafe_csv, newline="") as fh:
        for row in _csv.DictReader(fh):
            selected.setdefault(int(row["cluster_id"]), []).append(row["image_id"])
    from .selection import Selected, UnsafeSet

    unsafe = UnsafeSet(
        {c: len(v) for c, v in selected.items()},
        {c: [Selected(i, 1, 0.0) for i in v] for c, v in selected.items()},
    )
    imp_ds, imp_man = load_dataset(cfg["improvement_dir"])
    if labels_path is not None:
        labels = read_labels_csv(labels_path)
    else:
        labels = {r.id: r.label for r in imp_man.rows}
        print("[retrain] no labels CSV given; using the improvement manifest labels")
    balanced = balance(unsafe, seed=cfg["retrain_seed"])
    pixels = {imp_ds.ids[i]: imp_ds.images[i] for i in range(len(imp_ds))}
    train_ds, _ = load_dataset(cfg["train_dir"])
    union = build_union_dataset(train_ds, balanced, pixels, labels)
    net = load(model_path)
    epochs = cfg["retrain_epochs"] if cfg["retrain_epochs"] is not None else cfg["epochs"]
    lr = cfg["retrain_lr"] if cfg["retrain_lr"] is not None else cfg["learning_rate"]
    retrained = train(
        net,
        union,
        TrainConfig(epochs, lr, cfg["batch_size"], cfg["retrain_seed"]),
    )
    save(retrained, retrained_path)
    test_ds, _ = load_dataset(cfg["test_dir"])
    before = evaluate(net, test_ds).accuracy
    after = evaluate(retrained, test_ds).accuracy
    report_path.write_text(
        json.dumps(
            {
                "accuracy_before": before,
                "accuracy_after": after,
                "improvement": after - before,
                "balanced_unsafe_size": balanced.size(),
                "union_size": len(union),
            },
            indent=2,
        )
    )
    print(f"[retrain] accuracy {before:.4f} -> {after:.4f}; model -> {retrained_path}")
    record_stage(run_dir, "retrain", params, inputs, [retrained_path, report_path], started)
    return 0


def cmd_report(cfg: dict) -> int:
    run_dir = _prepare_run_dir(cfg)
    clusters = _load_clusters(run_dir)
    test_dir = Path(cfg["test_dir"])
    manifest = Manifest.read_csv(_need(test_dir / "manifest.csv", "test dataset", "generate"))
    image_paths = {r.id: test_dir / r.path for r in manifest.rows}
    summary = cluster_reports(
        clusters,
        image_paths,
        run_dir / "reports",
        images_per_sheet=cfg["images_per_sheet"],
        columns=cfg["columns"],
        gif=cfg["gif"],
        images_per_minute=cfg["images_per_minute"],
        manifest=manifest,
    )
    print(
        f"[report] {len(summary.sheets)} contact sheets"
        + (f", {len(summary.gifs)} GIFs" if cfg["gif"] else "")
        + (f", {len(summary.missing)} missing images" if summary.missing else "")
        + f" -> {run_dir / 'reports'}"
    )
    return 0


def cmd_experiment(cfg: dict) -> int:
    run_dir = _prepare_run_dir(cfg)
    config = harness.ExperimentConfig(
        n_train=cfg["n_train"],
        n_test=cfg["n_test"],
        n_improvement=cfg["n_improvement"],
        train_hard=tuple(cfg["train_hard"]),
        test_hard=tuple(cfg["test_hard"]),
        improvement_hard=tuple(cfg["improvement_hard"]),
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        retrain_epochs=cfg["retrain_epochs"],
        retrain_learning_rate=cfg["retrain_lr"],
        sf=cfg["sf"],
        data_seed=cfg["gen_seed"],
        model_seed=cfg["init_seed"],
        seeds=tuple(cfg["seeds"]),
        candidate_layers=tuple(cfg["layers"]) if cfg["layers"] is not None else None,
        n_classes=cfg["classes"],
    )
    report = harness.run_experiment(config, jobs=cfg["jobs"])
    out_dir = run_dir / "reports" / "experiment"
    report.write(out_dir)
    print(
        f"[experiment] original {report.original_accuracy:.4f}; mean accuracies "
        f"guided {report.mean_accuracy('guided'):.4f}, "
        f"b1 {report.mean_accuracy('b1'):.4f}, b2 {report.mean_accuracy('b2'):.4f}; "
        f"effect sizes vs b1 {report.a12['b1']:.2f}, vs b2 {report.a12['b2']:.2f} -> {out_dir}"
    )
    return 0


def cmd_schema() -> int:
    print(json.dumps({k: {"type": t, "default": d} for k, (t, d) in CONFIG_SCHEMA.items()},
                     indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="heatcluster",
        description="Heatmap-guided root-cause clustering and retraining pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "render the synthetic train/test/improvement datasets"),
        ("train", "train the base model on the training dataset"),
        ("eval", "evaluate the model and record the error-inducing test images"),
        ("heatmaps", "compute relevance heatmaps for the error-inducing images"),
        ("cluster", "build distance matrices and select root-cause clusters"),
        ("select", "pick unsafe improvement images under per-cluster quotas"),
        ("retrain", "bootstrap-balance the labeled unsafe set and retrain"),
        ("report", "render per-cluster contact sheets (and optional GIFs)"),
        ("experiment", "run the seeded retraining comparison against baselines"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--jobs", type=int, default=None, help="worker processes for parallel stages")
        if name == "retrain":
            p.add_argument("--labels", default=None, help="labels CSV (image_id,label)")
        if name == "report":
            p.add_argument("--gif", action="store_true", help="also write animated GIFs")
    sub.add_parser("schema", help="print the config schema as JSON")

    args = parser.parse_args(argv)
    if args.command == "schema":
        return cmd_schema()
    try:
        cfg = load_config(args.config)
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            cfg["jobs"] = args.jobs
        if args.command == "report" and getattr(args, "gif", False):
            cfg["gif"] = True
        dispatch = {
            "generate": cmd_generate,
            "train": cmd_train,
            "eval": cmd_eval,
            "heatmaps": cmd_heatmaps,
            "cluster": cmd_cluster,
            "select": cmd_select,
            "report": cmd_report,
            "experiment": cmd_experiment,
        }
        if args.command == "retrain":
            return cmd_retrain(cfg, labels_path=args.labels)
        return dispatch[args.command](cfg)
    except harness.StageError as exc:
        print(f"[{exc.stage}] error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, StageDependencyError, ValueError, OSError) as exc:
        print(f"[{args.command}] error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
