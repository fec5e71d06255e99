"""Minimal feedforward image-network engine.

Dense, 2-D convolution, ReLU, max-pool and flatten layers over float64
numpy arrays, with activation tracing, SGD training, evaluation and a
documented binary model format.
"""

from __future__ import annotations

import numpy as np

from .layers import (
    CONV2D,
    DENSE,
    FLATTEN,
    MAXPOOL,
    PARAMETERIZED_KINDS,
    RELU,
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    ReLU,
)
from .network import (
    CLASSIFICATION,
    REGRESSION,
    ActivationTrace,
    Network,
    forward,
    predict,
    predict_batch,
    softmax,
)
from .serialize import ModelFormatError, load, save
from .training import AccuracyReport, LabeledDataset, TrainConfig, evaluate, train


def build_classifier(
    n_classes: int,
    input_shape: tuple[int, int, int] = (1, 32, 32),
    seed: int = 0,
    class_names: list[str] | None = None,
) -> Network:
    """Default desk-scale classifier: two conv/pool blocks plus two dense layers."""
    c, h, w = input_shape
    conv1 = Conv2D(c, 8, 3)
    conv2 = Conv2D(8, 16, 3)
    h1, w1 = (h - 2) // 2, (w - 2) // 2
    h2, w2 = (h1 - 2) // 2, (w1 - 2) // 2
    flat = 16 * h2 * w2
    layers = [
        conv1,
        ReLU(),
        MaxPool2D(2),
        conv2,
        ReLU(),
        MaxPool2D(2),
        Flatten(),
        Dense(flat, 64),
        ReLU(),
        Dense(64, n_classes),
    ]
    names = class_names if class_names is not None else [str(i) for i in range(n_classes)]
    net = Network(layers, CLASSIFICATION, input_shape, names)
    net.init_params(np.random.default_rng(seed))
    return net


__all__ = [
    "ActivationTrace",
    "AccuracyReport",
    "CLASSIFICATION",
    "CONV2D",
    "Conv2D",
    "DENSE",
    "Dense",
    "FLATTEN",
    "Flatten",
    "LabeledDataset",
    "MAXPOOL",
    "MaxPool2D",
    "ModelFormatError",
    "Network",
    "PARAMETERIZED_KINDS",
    "REGRESSION",
    "RELU",
    "ReLU",
    "TrainConfig",
    "build_classifier",
    "evaluate",
    "forward",
    "load",
    "predict",
    "predict_batch",
    "save",
    "softmax",
    "train",
]
