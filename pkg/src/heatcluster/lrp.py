"""Relevance propagation over a traced forward pass.

The score of one selected output neuron is redistributed backwards through
the layer stack: each neuron passes its relevance to the lower layer in
proportion to activation times positive weight (the stabilized z+ rule).
ReLU layers copy relevance through, max-pool routes each cell's relevance
entirely to the winning input, flatten only reshapes.  The result is one
relevance matrix ("heatmap") per layer interface for every image.
"""

from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .micronet import ActivationTrace, Network, forward
from .micronet.layers import CONV2D, DENSE, FLATTEN, MAXPOOL, RELU

#: Denominator stabilizer for the z+ rule.  A neuron whose positive-weight
#: response sums to exactly zero drops its relevance instead.
STABILIZER_EPS = 1e-9

PREDICTED_CLASS = "predicted_class"
WORST_OUTPUT = "worst_output"

STORE_MAGIC = 0x484D5031  # "HMP1"


class HeatmapNotFoundError(KeyError):
    """Lookup for an image or layer the store does not hold."""


@dataclass(frozen=True)
class RelevanceSeed:
    """Output-layer relevance: a single nonnegative score at one neuron."""

    index: int
    value: float
    width: int

    def __post_init__(self):
        if not 0 <= self.index < self.width:
            raise ValueError(f"seed index {self.index} outside output width {self.width}")
        if self.value < 0:
            raise ValueError("seed value must be nonnegative")

    def vector(self) -> np.ndarray:
        v = np.zeros(self.width)
        v[self.index] = self.value
        return v


@dataclass(frozen=True)
class Heatmap:
    """Relevance matrix for one image at one layer interface.

    ``layer`` 0 is the network input; ``layer`` i is the output of layer
    i-1.  For feature-map shaped interfaces ``(C, H, W)`` the matrix has
    N = H*W rows and M = C columns; vector interfaces give M = 1.
    """

    layer: int
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def total(self) -> float:
        return float(self.values.sum())


def heatmap_matrix(rel: np.ndarray) -> np.ndarray:
    """Reshape an activation-shaped relevance array to its (N, M) matrix."""
    if rel.ndim == 3:
        c = rel.shape[0]
        return np.ascontiguousarray(rel.reshape(c, -1).T)
    if rel.ndim == 1:
        return rel[:, None].copy()
    raise ValueError(f"unsupported relevance rank {rel.ndim}")


def make_seed(
    network: Network,
    output: np.ndarray,
    mode: str = PREDICTED_CLASS,
    ground_truth: np.ndarray | None = None,
) -> RelevanceSeed:
    """Build the output-layer seed for one image.

    ``predicted_class`` seeds the argmax neuron with its score (ties go to
    the lowest index).  ``worst_output`` seeds the neuron with the largest
    absolute deviation from the ground truth, using that deviation's
    magnitude as the value.
    """
    output = np.asarray(output, dtype=np.float64)
    if output.shape != (network.output_width,):
        raise ValueError(f"output shape {output.shape} != ({network.output_width},)")
    if mode == PREDICTED_CLASS:
        idx = int(np.argmax(output))
        return RelevanceSeed(idx, float(output[idx]), network.output_width)
    if mode == WORST_OUTPUT:
        if ground_truth is None:
            raise ValueError("worst_output seeding requires a ground truth vector")
        ground_truth = np.asarray(ground_truth, dtype=np.float64)
        if ground_truth.shape != output.shape:
            raise ValueError("ground truth shape does not match output shape")
        deviation = np.abs(output - ground_truth)
        idx = int(np.argmax(deviation))
        return RelevanceSeed(idx, float(deviation[idx]), network.output_width)
    raise ValueError(f"unknown seed mode {mode!r}")


def _stabilized_shares(rel: np.ndarray, response: np.ndarray) -> np.ndarray:
    """rel / (response + eps*sign(response)), zero where the response is zero."""
    denom = response + STABILIZER_EPS * np.sign(response)
    with np.errstate(divide="ignore", invalid="ignore"):
        shares = np.where(response != 0.0, rel / np.where(denom == 0.0, 1.0, denom), 0.0)
    return shares


def _relprop_dense(layer, x: np.ndarray, rel: np.ndarray) -> np.ndarray:
    wpos = np.maximum(layer.weight, 0.0)
    response = wpos @ x
    shares = _stabilized_shares(rel, response)
    return x * (wpos.T @ shares)


def _relprop_conv(layer, x: np.ndarray, rel: np.ndarray) -> np.ndarray:
    wpos = np.maximum(layer.weight, 0.0)
    response = layer.forward_with_weight(x[None], wpos)[0]
    shares = _stabilized_shares(rel, response)
    return x * layer.backprop_to_input(shares[None], wpos, (1,) + x.shape)[0]


def propagate(network: Network, trace: ActivationTrace, seed: RelevanceSeed) -> list[Heatmap]:
    """Backward relevance pass; returns one Heatmap per interface, input included.

    Index i of the result is the relevance at interface i (0 = input image,
    len(layers) = output).  Every heatmap redistributes the full seed value.
    """
    if len(trace) != len(network.layers):
        raise ValueError(
            f"trace covers {len(trace)} layers but the network has {len(network.layers)}"
        )
    if seed.width != network.output_width:
        raise ValueError("seed width does not match the network output width")
    for i, layer in enumerate(network.layers):
        if trace.inputs[i].shape != network.interface_shapes[i]:
            raise ValueError(f"trace input {i} has shape {trace.inputs[i].shape}, "
                             f"expected {network.interface_shapes[i]}")
        if trace.outputs[i].shape != network.interface_shapes[i + 1]:
            raise ValueError(f"trace output {i} does not match the network")

    rel = seed.vector()
    rels = [rel]
    for i in range(len(network.layers) - 1, -1, -1):
        layer = network.layers[i]
        x = trace.inputs[i]
        if layer.kind == DENSE:
            rel = _relprop_dense(layer, x, rel)
        elif layer.kind == CONV2D:
            rel = _relprop_conv(layer, x, rel)
        elif layer.kind == RELU:
            rel = rel.copy()
        elif layer.kind == MAXPOOL:
            rel = layer.backward(x[None], rel[None])[0][0]
        elif layer.kind == FLATTEN:
            rel = rel.reshape(x.shape)
        else:  # pragma: no cover - layer kinds are closed
            raise ValueError(f"no relevance rule for layer kind {layer.kind!r}")
        rels.append(rel)
    rels.reverse()
    return [Heatmap(i, heatmap_matrix(r)) for i, r in enumerate(rels)]


class HeatmapStore:
    """Heatmaps indexed by (image id, layer interface), insertion-ordered."""

    def __init__(self):
        self._layers: dict[int, dict[str, np.ndarray]] = {}

    def add(self, image_id: str, layer: int, values: np.ndarray) -> None:
        per_layer = self._layers.setdefault(int(layer), {})
        if image_id in per_layer:
            raise ValueError(f"duplicate heatmap for image {image_id!r} at layer {layer}")
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("heatmap values must be a 2-D matrix")
        existing = next(iter(per_layer.values()), None)
        if existing is not None and existing.shape != values.shape:
            raise ValueError(
                f"heatmap shape {values.shape} differs from layer {layer} shape {existing.shape}"
            )
        per_layer[image_id] = values

    def layers(self) -> list[int]:
        return sorted(self._layers)

    def image_ids(self, layer: int) -> list[str]:
        return list(self._layer(layer))

    def get(self, image_id: str, layer: int) -> Heatmap:
        per_layer = self._layer(layer)
        if image_id not in per_layer:
            raise HeatmapNotFoundError(f"no heatmap for image {image_id!r} at layer {layer}")
        return Heatmap(layer, per_layer[image_id])

    def layer_maps(self, layer: int) -> dict[str, np.ndarray]:
        return dict(self._layer(layer))

    def count(self) -> int:
        return sum(len(v) for v in self._layers.values())

    def _layer(self, layer: int) -> dict[str, np.ndarray]:
        if layer not in self._layers:
            raise HeatmapNotFoundError(f"store holds no layer {layer}")
        return self._layers[layer]

    # ---- persistence: one binary file per layer -------------------------

    def save(self, directory) -> list[Path]:
        """One ``layer_<i>.hm`` file per layer; bit-exact round trip."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for layer in self.layers():
            maps = self._layers[layer]
            first = next(iter(maps.values()))
            n, m = first.shape
            path = directory / f"layer_{layer:03d}.hm"
            with open(path, "wb") as fh:
                fh.write(struct.pack("<IiIII", STORE_MAGIC, layer, n, m, len(maps)))
                for image_id, values in maps.items():
                    raw = image_id.encode("utf-8")
                    fh.write(struct.pack("<H", len(raw)))
                    fh.write(raw)
                    fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
            written.append(path)
        return written

    @classmethod
    def load(cls, directory) -> "HeatmapStore":
        store = cls()
        for path in sorted(Path(directory).glob("layer_*.hm")):
            data = path.read_bytes()
            magic, layer, n, m, count = struct.unpack_from("<IiIII", data, 0)
            if magic != STORE_MAGIC:
                raise ValueError(f"{path}: not a heatmap store file")
            offset = struct.calcsize("<IiIII")
            for _ in range(count):
                (id_len,) = struct.unpack_from("<H", data, offset)
                offset += 2
                image_id = data[offset : offset + id_len].decode("utf-8")
                offset += id_len
                values = np.frombuffer(data, dtype="<f8", count=n * m, offset=offset)
                offset += 8 * n * m
                store.add(image_id, layer, values.reshape(n, m))
        return store


def _heatmaps_for_chunk(args) -> list[tuple[str, dict[int, np.ndarray]]]:
    network, ids, images, mode, truths, layers = args
    out = []
    for i, image_id in enumerate(ids):
        output, trace = forward(network, images[i])
        seed = make_seed(network, output, mode, None if truths is None else truths[i])
        maps = propagate(network, trace, seed)
        out.append((image_id, {layer: maps[layer].values for layer in layers}))
    return out


def heatmaps_for_set(
    network: Network,
    ids: Sequence[str],
    images: np.ndarray,
    mode: str = PREDICTED_CLASS,
    ground_truth: np.ndarray | None = None,
    layers: Sequence[int] | None = None,
    jobs: int = 1,
) -> HeatmapStore:
    """Heatmaps for every image at every requested layer interface.

    By default all interfaces after the input are kept.  Images fan out
    across ``jobs`` worker processes; results merge by image id so the
    store is identical regardless of the partitioning.
    """
    images = np.asarray(images, dtype=np.float64)
    if len(ids) != len(images):
        raise ValueError("ids and images must have equal length")
    if len(set(ids)) != len(ids):
        raise ValueError("image ids must be unique")
    if mode == WORST_OUTPUT and ground_truth is None:
        raise ValueError("worst_output mode requires ground truth values")
    wanted = list(layers) if layers is not None else list(range(1, len(network.layers) + 1))
    for layer in wanted:
        if not 0 <= layer <= len(network.layers):
            raise ValueError(f"layer interface {layer} out of range")

    store = HeatmapStore()
    if jobs <= 1 or len(ids) < 2:
        chunks = [_heatmaps_for_chunk((network, list(ids), images, mode, ground_truth, wanted))]
    else:
        bounds = np.linspace(0, len(ids), num=min(jobs, len(ids)) + 1, dtype=int)
        tasks = [
            (
                network,
                list(ids[a:b]),
                images[a:b],
                mode,
                None if ground_truth is None else ground_truth[a:b],
                wanted,
            )
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_heatmaps_for_chunk, tasks))
    merged: dict[str, dict[int, np.ndarray]] = {}
    for chunk in chunks:
        for image_id, maps in chunk:
            merged[image_id] = maps
    for image_id in ids:  # original order, independent of worker completion
        for layer, values in merged[image_id].items():
            store.add(image_id, layer, values)
    return store
