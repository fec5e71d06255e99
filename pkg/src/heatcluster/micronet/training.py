"""Datasets, SGD training and evaluation for the micro network engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import PARAMETERIZED_KINDS
from .network import CLASSIFICATION, Network, softmax


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float
    batch_size: int
    seed: int = 0
    warm_start: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")


@dataclass
class LabeledDataset:
    """Images ``(n, C, H, W)`` with integer class labels or regression targets."""

    ids: list[str]
    images: np.ndarray
    labels: np.ndarray
    task: str = CLASSIFICATION

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if len(self.ids) != len(self.images) or len(self.images) != len(self.labels):
            raise ValueError("ids, images and labels must have equal length")

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices)
        return LabeledDataset(
            [self.ids[i] for i in indices],
            self.images[indices],
            self.labels[indices],
            self.task,
        )

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        if other.task != self.task:
            raise ValueError("cannot concatenate datasets of different tasks")
        return LabeledDataset(
            self.ids + other.ids,
            np.concatenate([self.images, other.images]),
            np.concatenate([self.labels, other.labels]),
            self.task,
        )


@dataclass
class AccuracyReport:
    """Accuracy plus per-image correctness flags.

    The flags partition the evaluated set: ``error_ids`` is the
    error-inducing subset, the rest is safe.
    """

    accuracy: float
    ids: list[str]
    correct: np.ndarray
    per_image_error: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def error_ids(self) -> list[str]:
        return [i for i, ok in zip(self.ids, self.correct) if not ok]

    def error_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.correct)


def _check_dataset(network: Network, dataset: LabeledDataset) -> None:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.images.shape[1:] != network.input_shape:
        raise ValueError(
            f"dataset image shape {dataset.images.shape[1:]} != network input "
            f"shape {network.input_shape}"
        )
    if network.task == CLASSIFICATION:
        labels = dataset.labels
        if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("classification labels must be a 1-D integer array")
        if labels.min() < 0 or labels.max() >= network.output_width:
            raise ValueError(
                f"label out of range [0, {network.output_width}): "
                f"found {labels.min()}..{labels.max()}"
            )
    else:
        if dataset.labels.ndim != 2 or dataset.labels.shape[1] != network.output_width:
            raise ValueError(
                f"regression targets must have shape (n, {network.output_width})"
            )


def _loss_gradient(network: Network, final: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n = final.shape[0]
    if network.task == CLASSIFICATION:
        probs = softmax(final)
        grad = probs
        grad[np.arange(n), labels] -= 1.0
        return grad / n
    # Mean squared error over every output entry.
    return 2.0 * (final - labels) / final.size


def train(network: Network, dataset: LabeledDataset, config: TrainConfig) -> Network:
    """Plain mini-batch SGD; returns a new network, the input is untouched.

    Deterministic given ``config.seed``: the same seed drives both the
    optional re-initialization (``warm_start=False``) and epoch shuffling.
    """
    _check_dataset(network, dataset)
    net = network.copy()
    rng = np.random.default_rng(config.seed)
    if not config.warm_start:
        net.init_params(rng)
    n = len(dataset)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            x = dataset.images[batch]
            inputs, outputs = net.run_layers(x)
            grad = _loss_gradient(net, outputs[-1], dataset.labels[batch])
            for i in range(len(net.layers) - 1, -1, -1):
                layer = net.layers[i]
                grad, param_grads = layer.backward(inputs[i], grad)
                if layer.kind in PARAMETERIZED_KINDS:
                    layer.weight -= config.learning_rate * param_grads["weight"]
                    layer.bias -= config.learning_rate * param_grads["bias"]
    for layer in net.layers:
        if layer.kind in PARAMETERIZED_KINDS and not (
            np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))
        ):
            raise ValueError(
                "training diverged to non-finite weights; lower the learning rate"
            )
    return net


def evaluate(
    network: Network,
    dataset: LabeledDataset,
    *,
    regression_threshold: float = 4.0,
    batch_size: int = 256,
) -> AccuracyReport:
    """Accuracy and per-image correctness flags.

    Classification: correct iff argmax equals the label.  Regression:
    correct iff the mean absolute deviation over all outputs stays within
    ``regression_threshold`` (strictly above the threshold is erroneous).
    """
    _check_dataset(network, dataset)
    n = len(dataset)
    correct = np.zeros(n, dtype=bool)
    per_image_error = np.zeros(n)
    for start in range(0, n, batch_size):
        x = dataset.images[start : start + batch_size]
        _, outputs = network.run_layers(x)
        scored = network.score(outputs[-1])
        sl = slice(start, start + len(x))
        if network.task == CLASSIFICATION:
            pred = np.argmax(scored, axis=1)
            correct[sl] = pred == dataset.labels[sl]
            per_image_error[sl] = (~correct[sl]).astype(float)
        else:
            err = np.abs(scored - dataset.labels[sl]).mean(axis=1)
            per_image_error[sl] = err
            correct[sl] = err <= regression_threshold
    return AccuracyReport(float(correct.mean()), list(dataset.ids), correct, per_image_error)
