"""Binary model file format.

Layout (all integers little-endian):

    magic        8 bytes  b"HUDDNET1"
    layer count  uint32
    per layer    uint8 kind tag, then kind-specific fields:
        dense    in uint32, out uint32, weight float64[out*in], bias float64[out]
        conv2d   in_c, out_c, kernel, stride, padding (uint32 each),
                 weight float64[out_c*in_c*k*k], bias float64[out_c]
        relu     -
        maxpool  window uint32, stride uint32
        flatten  -
    trailer      task uint8 (0 classification, 1 regression),
                 ndim uint8, input shape uint32[ndim],
                 name count uint16, per name: uint16 byte length + utf-8 bytes

``load(save(net))`` reproduces the network bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from .network import CLASSIFICATION, REGRESSION, Network

MAGIC = b"HUDDNET1"

_KIND_TAGS = {"dense": 0, "conv2d": 1, "relu": 2, "maxpool": 3, "flatten": 4}
_TASK_TAGS = {CLASSIFICATION: 0, REGRESSION: 1}
_TASK_FROM_TAG = {v: k for k, v in _TASK_TAGS.items()}


class ModelFormatError(ValueError):
    """Malformed or incompatible model file."""


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise ModelFormatError(
                f"truncated model file: needed {n} bytes for {what} at offset {self.offset}"
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f64_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8", count=count).astype(np.float64)


def _pack_array(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save(network: Network, path) -> None:
    """Write the network to ``path`` in the documented binary format."""
    parts = [MAGIC, struct.pack("<I", len(network.layers))]
    for layer in network.layers:
        parts.append(struct.pack("<B", _KIND_TAGS[layer.kind]))
        if layer.kind == "dense":
            parts.append(struct.pack("<II", layer.in_width, layer.out_width))
            parts.append(_pack_array(layer.weight))
            parts.append(_pack_array(layer.bias))
        elif layer.kind == "conv2d":
            parts.append(
                struct.pack(
                    "<IIIII",
                    layer.in_channels,
                    layer.out_channels,
                    layer.kernel_size,
                    layer.stride,
                    layer.padding,
                )
            )
            parts.append(_pack_array(layer.weight))
            parts.append(_pack_array(layer.bias))
        elif layer.kind == "maxpool":
            parts.append(struct.pack("<II", layer.window, layer.stride))
    parts.append(struct.pack("<B", _TASK_TAGS[network.task]))
    parts.append(struct.pack("<B", len(network.input_shape)))
    parts.append(struct.pack(f"<{len(network.input_shape)}I", *network.input_shape))
    parts.append(struct.pack("<H", len(network.output_names)))
    for name in network.output_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    Path(path).write_bytes(b"".join(parts))


def load(path) -> Network:
    """Read a network back; raises ModelFormatError on malformed files."""
    reader = _Reader(Path(path).read_bytes())
    magic = reader.take(len(MAGIC), "magic header")
    if magic != MAGIC:
        raise ModelFormatError(
            f"unsupported model file: magic {magic!r} at offset 0, expected {MAGIC!r} "
            "(format version mismatch)"
        )
    layer_count = reader.u32("layer count")
    layers = []
    for idx in range(layer_count):
        tag = reader.u8(f"kind tag of layer {idx}")
        if tag == 0:
            in_w = reader.u32("dense in width")
            out_w = reader.u32("dense out width")
            if in_w < 1 or out_w < 1:
                raise ModelFormatError(
                    f"invalid dense widths ({in_w}, {out_w}) at offset {reader.offset}"
                )
            weight = reader.f64_array(in_w * out_w, "dense weight").reshape(out_w, in_w)
            bias = reader.f64_array(out_w, "dense bias")
            layers.append(Dense(in_w, out_w, weight=weight, bias=bias))
        elif tag == 1:
            in_c = reader.u32("conv in channels")
            out_c = reader.u32("conv out channels")
            k = reader.u32("conv kernel")
            stride = reader.u32("conv stride")
            padding = reader.u32("conv padding")
            try:
                layer = Conv2D(in_c, out_c, k, stride, padding)
            except ValueError as exc:
                raise ModelFormatError(f"invalid conv record at offset {reader.offset}: {exc}")
            layer.weight = reader.f64_array(out_c * in_c * k * k, "conv weight").reshape(
                out_c, in_c, k, k
            )
            layer.bias = reader.f64_array(out_c, "conv bias")
            layers.append(layer)
        elif tag == 2:
            layers.append(ReLU())
        elif tag == 3:
            window = reader.u32("pool window")
            stride = reader.u32("pool stride")
            layers.append(MaxPool2D(window, stride))
        elif tag == 4:
            layers.append(Flatten())
        else:
            raise ModelFormatError(f"unknown layer kind tag {tag} at offset {reader.offset - 1}")
    task_tag = reader.u8("task tag")
    if task_tag not in _TASK_FROM_TAG:
        raise ModelFormatError(f"unknown task tag {task_tag} at offset {reader.offset - 1}")
    ndim = reader.u8("input rank")
    input_shape = tuple(reader.u32(f"input dim {i}") for i in range(ndim))
    n_names = reader.u16("output name count")
    names = []
    for i in range(n_names):
        length = reader.u16(f"length of output name {i}")
        names.append(reader.take(length, f"output name {i}").decode("utf-8"))
    if reader.offset != len(reader.data):
        raise ModelFormatError(
            f"trailing garbage: {len(reader.data) - reader.offset} bytes at offset {reader.offset}"
        )
    try:
        return Network(layers, _TASK_FROM_TAG[task_tag], input_shape, names)
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent model file: {exc}")
