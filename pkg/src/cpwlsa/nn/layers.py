"""Network description, shape propagation and on-disk formats.

Activations travel as ``batch x features`` matrices; a CONV2D layer reads
its ``features`` as a flattened ``C x H x W`` volume and writes
``F x OH x OW``, so FLATTEN only relabels the shape.

A network is stored as a JSON manifest plus one raw weight file holding
every tensor as little-endian int16, back to back, at the offsets the
manifest lists. DENSE weights are ``in x out``, CONV2D weights are
``F x C x kh x kw``; a bias shares its weight's Q-format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from ..cpwl import FunctionId
from ..fixedpoint import Q8_8, FixedPointFormat, dequantize, fit_format, quantize
from .im2col import conv_output_size

MANIFEST_KIND = "cpwl-network"
MANIFEST_VERSION = 1


class LayerKind(str, Enum):
    DENSE = "DENSE"
    CONV2D = "CONV2D"
    GELU = "GELU"
    RELU = "RELU"
    SOFTMAX = "SOFTMAX"
    LAYERNORM = "LAYERNORM"
    FLATTEN = "FLATTEN"


ELEMENTWISE = {LayerKind.GELU: FunctionId.GELU, LayerKind.RELU: FunctionId.RELU}


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_features: int | None = None
    out_features: int | None = None
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: int | None = None
    stride: int = 1
    padding: int = 0
    weight: str | None = None
    bias: str | None = None
    gamma: str | None = None
    beta: str | None = None
    fmt: FixedPointFormat = Q8_8

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "format": str(self.fmt)}
        for name in ("in_features", "out_features", "in_channels", "out_channels", "kernel",
                     "weight", "bias", "gamma", "beta"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.kind is LayerKind.CONV2D:
            out["stride"], out["padding"] = self.stride, self.padding
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "LayerSpec":
        doc = dict(doc)
        fmt = FixedPointFormat.parse(doc.pop("format", "Q8.8"))
        return cls(fmt=fmt, **doc)


@dataclass(frozen=True)
class WeightTensor:
    """Offline-quantized tensor (any rank)."""

    data: np.ndarray
    fmt: FixedPointFormat

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.int16)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_real(cls, values, fmt: FixedPointFormat | None = None, max_frac: int = 14) -> "WeightTensor":
        values = np.asarray(values, dtype=np.float64)
        fmt = fmt or fit_format(values, max_frac=max_frac)
        return cls(np.asarray(quantize(values, fmt)).reshape(values.shape), fmt)

    def to_real(self) -> np.ndarray:
        return np.asarray(dequantize(self.data, self.fmt)).reshape(self.data.shape)

    def __eq__(self, other):
        if not isinstance(other, WeightTensor):
            return NotImplemented
        return self.fmt == other.fmt and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    granularity: float = 0.25
    cap_bounds: dict = field(default_factory=dict)
    input_fmt: FixedPointFormat = Q8_8
    weights: dict = field(default_factory=dict, compare=False)
    name: str = "net"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        bounds = {FunctionId(k): (float(v[0]), float(v[1])) for k, v in self.cap_bounds.items()}
        object.__setattr__(self, "cap_bounds", bounds)

    def with_granularity(self, g: float) -> "NetworkSpec":
        return replace(self, granularity=float(g))

    def shapes(self) -> list[tuple[int, ...]]:
        """Output shape of every layer; raises ``ValueError`` on any mismatch."""
        shape = self.input_shape
        out = []
        for idx, layer in enumerate(self.layers):
            try:
                shape = _propagate(layer, shape, self.weights)
            except (KeyError, ValueError) as exc:
                raise ValueError(f"layer {idx} ({layer.kind.value}): {exc}") from exc
            out.append(shape)
        return out

    def validate(self) -> None:
        self.shapes()

    def output_shape(self) -> tuple[int, ...]:
        shapes = self.shapes()
        return shapes[-1] if shapes else self.input_shape


def _features(shape) -> int:
    return math.prod(shape)


def _tensor(weights, name, shape=None):
    if name is None:
        raise ValueError("missing tensor reference")
    if name not in weights:
        raise KeyError(f"tensor {name!r} not loaded")
    t = weights[name]
    if shape is not None and t.data.shape != tuple(shape):
        raise ValueError(f"tensor {name!r} has shape {t.data.shape}, expected {tuple(shape)}")
    return t


def _propagate(layer: LayerSpec, shape, weights) -> tuple[int, ...]:
    kind = layer.kind
    if kind is LayerKind.DENSE:
        n_in = _features(shape)
        if layer.in_features is not None and layer.in_features != n_in:
            raise ValueError(f"expects {layer.in_features} inputs, receives {n_in}")
        w = _tensor(weights, layer.weight, (n_in, layer.out_features))
        if layer.bias is not None:
            b = _tensor(weights, layer.bias, (layer.out_features,))
            if b.fmt != w.fmt:
                raise ValueError("bias and weight must share a Q-format")
        return (layer.out_features,)
    if kind is LayerKind.CONV2D:
        if len(shape) != 3:
            raise ValueError(f"needs a C x H x W input, receives {shape}")
        c, h, w_ = shape
        if layer.in_channels is not None and layer.in_channels != c:
            raise ValueError(f"expects {layer.in_channels} channels, receives {c}")
        k = layer.kernel
        wt = _tensor(weights, layer.weight, (layer.out_channels, c, k, k))
        if layer.bias is not None:
            b = _tensor(weights, layer.bias, (layer.out_channels,))
            if b.fmt != wt.fmt:
                raise ValueError("bias and weight must share a Q-format")
        return (
            layer.out_channels,
            conv_output_size(h, k, layer.stride, layer.padding),
            conv_output_size(w_, k, layer.stride, layer.padding),
        )
    if kind is LayerKind.FLATTEN:
        return (_features(shape),)
    if kind in (LayerKind.SOFTMAX, LayerKind.LAYERNORM):
        if len(shape) != 1:
            raise ValueError(f"normalizes a flat feature axis, receives {shape}; insert FLATTEN")
        if kind is LayerKind.LAYERNORM:
            for name in (layer.gamma, layer.beta):
                if name is not None:
                    _tensor(weights, name, shape)
        return shape
    return shape  # GELU, RELU


# ------------------------------------------------------------------ I/O


def save_network(net: NetworkSpec, manifest_path, weights_path=None) -> None:
    manifest_path = Path(manifest_path)
    weights_path = Path(weights_path) if weights_path else manifest_path.with_suffix(".bin")
    tensors, blob, offset = {}, bytearray(), 0
    for name in sorted(net.weights):
        t = net.weights[name]
        raw = t.data.astype("<i2").tobytes()
        tensors[name] = {"shape": list(t.data.shape), "format": str(t.fmt), "offset": offset}
        blob += raw
        offset += len(raw)
    weights_path.write_bytes(bytes(blob))
    doc = {
        "kind": MANIFEST_KIND,
        "version": MANIFEST_VERSION,
        "name": net.name,
        "input_shape": list(net.input_shape),
        "input_format": str(net.input_fmt),
        "granularity": net.granularity,
        "cap_bounds": {k.value: list(v) for k, v in sorted(net.cap_bounds.items())},
        "layers": [layer.to_dict() for layer in net.layers],
        "weights": {"file": weights_path.name, "byte_order": "little", "dtype": "int16", "tensors": tensors},
    }
    manifest_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_network(manifest_path) -> NetworkSpec:
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    if doc.get("kind") != MANIFEST_KIND or doc.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{manifest_path} is not a version {MANIFEST_VERSION} network manifest")
    wdoc = doc["weights"]
    blob = (manifest_path.parent / wdoc["file"]).read_bytes()
    weights = {}
    for name, meta in wdoc["tensors"].items():
        count = math.prod(meta["shape"])
        arr = np.frombuffer(blob, dtype="<i2", count=count, offset=meta["offset"]).reshape(meta["shape"])
        weights[name] = WeightTensor(arr.astype(np.int16), FixedPointFormat.parse(meta["format"]))
    net = NetworkSpec(
        layers=tuple(LayerSpec.from_dict(d) for d in doc["layers"]),
        input_shape=tuple(doc["input_shape"]),
        granularity=float(doc["granularity"]),
        cap_bounds=doc.get("cap_bounds", {}),
        input_fmt=FixedPointFormat.parse(doc.get("input_format", "Q8.8")),
        weights=weights,
        name=doc.get("name", "net"),
    )
    net.validate()
    return net
