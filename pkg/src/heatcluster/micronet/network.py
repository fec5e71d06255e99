"""Network container, forward passes and activation traces."""

from __future__ import annotations

import copy as _copy
from dataclasses import dataclass

import numpy as np

from .layers import PARAMETERIZED_KINDS, Layer

CLASSIFICATION = "classification"
REGRESSION = "regression"


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ActivationTrace:
    """Per-layer input and output arrays recorded during one forward pass.

    Entry ``i`` holds the (unbatched) input and output of layer ``i``; the
    input of layer 0 is the image itself.
    """

    inputs: list[np.ndarray]
    outputs: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.inputs)


class Network:
    """Ordered layer stack plus task metadata.

    ``task`` is either ``"classification"`` (softmax applied over the final
    layer when scoring) or ``"regression"`` (raw outputs).  ``output_names``
    are class labels or regression output names; the final layer width must
    match their count.
    """

    def __init__(
        self,
        layers: list[Layer],
        task: str,
        input_shape: tuple[int, ...],
        output_names: list[str],
    ):
        if task not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task {task!r}")
        if not any(layer.kind in PARAMETERIZED_KINDS for layer in layers):
            raise ValueError("network needs at least one parameterized layer")
        self.layers = list(layers)
        self.task = task
        self.input_shape = tuple(int(d) for d in input_shape)
        self.output_names = [str(n) for n in output_names]
        # Validates that consecutive layer shapes compose.
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.out_shape(shapes[-1])))
        self.interface_shapes = shapes
        if shapes[-1] != (len(self.output_names),):
            raise ValueError(
                f"final layer shape {shapes[-1]} does not match "
                f"{len(self.output_names)} output names"
            )

    @property
    def output_width(self) -> int:
        return len(self.output_names)

    def parameterized_interfaces(self) -> list[int]:
        """Interface indices (1-based, = layer index + 1) fed by dense/conv layers."""
        return [i + 1 for i, layer in enumerate(self.layers) if layer.kind in PARAMETERIZED_KINDS]

    def copy(self) -> "Network":
        return _copy.deepcopy(self)

    def init_params(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            if layer.kind in PARAMETERIZED_KINDS:
                layer.init_params(rng)

    def run_layers(self, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Run all layers on a batch, returning per-layer inputs and outputs."""
        inputs, outputs = [], []
        for layer in self.layers:
            inputs.append(x)
            x = layer.forward(x)
            outputs.append(x)
        return inputs, outputs

    def score(self, final: np.ndarray) -> np.ndarray:
        """Task head: softmax scores for classification, identity for regression."""
        return softmax(final) if self.task == CLASSIFICATION else final


def _check_image(network: Network, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != network.input_shape:
        raise ValueError(
            f"rejected input: image shape {image.shape} != network input shape {network.input_shape}"
        )
    if not np.all(np.isfinite(image)):
        raise ValueError("rejected input: image contains non-finite values")
    return image


def forward(network: Network, image: np.ndarray) -> tuple[np.ndarray, ActivationTrace]:
    """One forward pass with a full activation trace.

    Returns the final (task-head) output and an ActivationTrace covering
    every layer.
    """
    image = _check_image(network, image)
    inputs, outputs = network.run_layers(image[None])
    trace = ActivationTrace([a[0] for a in inputs], [a[0] for a in outputs])
    return network.score(outputs[-1])[0], trace


def predict(network: Network, image: np.ndarray):
    """Predicted class index (ties to the lowest index) or regression vector."""
    output, _ = forward(network, image)
    if network.task == CLASSIFICATION:
        return int(np.argmax(output))
    return output


def predict_batch(network: Network, images: np.ndarray) -> np.ndarray:
    """Vectorized predictions for a ``(n, ...)`` image stack."""
    images = np.asarray(images, dtype=np.float64)
    if images.shape[1:] != network.input_shape:
        raise ValueError(
            f"rejected input: batch item shape {images.shape[1:]} != {network.input_shape}"
        )
    _, outputs = network.run_layers(images)
    scored = network.score(outputs[-1])
    if network.task == CLASSIFICATION:
        return np.argmax(scored, axis=1)
    return scored
