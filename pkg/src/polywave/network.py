"""Sequential network container, topology config format and model files.

Topology configs are plain text, one layer per line::

    input 1 1600
    padding valid
    pnn 12 49 1 tanh
    maxpool2
    conv 12 25 tanh
    flatten
    dense 96 relu
    dense 88 softmax

``conv N K act`` is shorthand for ``pnn N K 1 act``. ``#`` starts a comment.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .activations import ACTIVATIONS
from .layers import Conv1D, Dense, Flatten, Layer, MaxPool2, PnnLayer, UpSample2
from .tensor import ShapeError

MODEL_MAGIC = b"PWNNMDL\x00"
MODEL_VERSION = 1


class TopologyError(ValueError):
    """Raised for specs whose layers do not compose."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # pnn | conv | maxpool2 | upsample2 | flatten | dense
    units: int = 0
    kernel: int = 0
    degree: int = 1
    activation: str = ""

    @property
    def trainable(self) -> bool:
        return self.kind in ("pnn", "conv", "dense")

    @property
    def is_conv(self) -> bool:
        return self.kind in ("pnn", "conv")

    def to_line(self) -> str:
        if self.kind == "pnn":
            return f"pnn {self.units} {self.kernel} {self.degree} {self.activation}"
        if self.kind == "conv":
            return f"conv {self.units} {self.kernel} {self.activation}"
        if self.kind == "dense":
            return f"dense {self.units} {self.activation}"
        return self.kind

    @classmethod
    def parse(cls, line: str) -> "LayerSpec":
        parts = line.split()
        kind = parts[0].lower()
        try:
            if kind == "pnn":
                _expect(parts, 5)
                return cls("pnn", int(parts[1]), int(parts[2]), int(parts[3]), parts[4])
            if kind == "conv":
                _expect(parts, 4)
                return cls("conv", int(parts[1]), int(parts[2]), 1, parts[3])
            if kind == "dense":
                _expect(parts, 3)
                return cls("dense", int(parts[1]), 0, 1, parts[2])
        except ValueError as exc:
            raise TopologyError(f"bad layer line {line!r}: {exc}") from None
        if kind in ("maxpool2", "upsample2", "flatten"):
            _expect(parts, 1)
            return cls(kind)
        raise TopologyError(f"unknown layer kind {parts[0]!r}")


def _expect(parts, n):
    if len(parts) != n:
        raise TopologyError(f"{parts[0]} takes {n - 1} arguments, got {len(parts) - 1}")


def pnn(units, kernel, degree, activation="tanh") -> LayerSpec:
    return LayerSpec("pnn", units, kernel, degree, activation)


def conv(units, kernel, activation="tanh") -> LayerSpec:
    return LayerSpec("conv", units, kernel, 1, activation)


def dense(units, activation) -> LayerSpec:
    return LayerSpec("dense", units, 0, 1, activation)


MAXPOOL2 = LayerSpec("maxpool2")
UPSAMPLE2 = LayerSpec("upsample2")
FLATTEN = LayerSpec("flatten")


@dataclass(frozen=True)
class NetworkSpec:
    input_channels: int
    input_length: int
    layers: tuple[LayerSpec, ...] = ()
    padding: str = "valid"

    def to_text(self) -> str:
        lines = [f"input {self.input_channels} {self.input_length}", f"padding {self.padding}"]
        lines += [layer.to_line() for layer in self.layers]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        channels = length = None
        padding = "valid"
        layers = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head = line.split()
            if head[0] == "input":
                if len(head) != 3:
                    raise TopologyError("input line needs channels and length")
                channels, length = int(head[1]), int(head[2])
            elif head[0] == "padding":
                if len(head) != 2 or head[1] not in ("valid", "same"):
                    raise TopologyError(f"bad padding line {line!r}")
                padding = head[1]
            else:
                layers.append(LayerSpec.parse(line))
        if channels is None:
            raise TopologyError("missing 'input <channels> <length>' line")
        return cls(channels, length, tuple(layers), padding)

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def with_layers(self, layers) -> "NetworkSpec":
        return replace(self, layers=tuple(layers))

    @property
    def degrees(self) -> list[int]:
        return [layer.degree for layer in self.layers if layer.is_conv]


def shape_trace(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Output shape ``(channels, samples)`` or ``(features,)`` of every layer in order."""
    shape: tuple[int, ...] = (spec.input_channels, spec.input_length)
    if min(shape) < 1:
        raise TopologyError(f"input shape must be positive, got {shape}")
    out = []
    for idx, layer in enumerate(spec.layers):
        shape = _next_shape(layer, shape, spec.padding, idx)
        out.append(shape)
    return out


def _next_shape(layer: LayerSpec, shape, padding, idx):
    where = f"layer {idx} ({layer.to_line()})"
    if layer.trainable and layer.activation.lower() not in ACTIVATIONS:
        raise TopologyError(f"{where}: unknown activation {layer.activation!r}")
    if layer.kind == "dense":
        if len(shape) != 1:
            raise TopologyError(f"{where}: dense needs a flatten before it")
        return (layer.units,)
    if len(shape) != 2:
        raise TopologyError(f"{where}: expects a (channels, samples) input")
    n, m = shape
    if layer.is_conv:
        if layer.units < 1 or layer.kernel < 1 or layer.degree < 1:
            raise TopologyError(f"{where}: units, kernel and degree must be >= 1")
        m_out = m if padding == "same" else m - layer.kernel + 1
        if m_out < 1:
            raise TopologyError(f"{where}: kernel {layer.kernel} longer than input length {m}")
        return (layer.units, m_out)
    if layer.kind == "maxpool2":
        if m // 2 < 1:
            raise TopologyError(f"{where}: input length {m} too short to pool")
        return (n, m // 2)
    if layer.kind == "upsample2":
        return (n, 2 * m)
    if layer.kind == "flatten":
        return (n * m,)
    raise TopologyError(f"{where}: unknown kind")


def layer_param_count(layer: LayerSpec, in_shape) -> int:
    if layer.is_conv:
        return layer.units * in_shape[0] * layer.kernel * layer.degree + layer.units
    if layer.kind == "dense":
        return layer.units * in_shape[0] + layer.units
    return 0


def param_count(spec: NetworkSpec) -> int:
    """Trainable parameter total: ``N*N_prev*K*D + N`` per conv layer plus dense heads."""
    shapes = [(spec.input_channels, spec.input_length)] + shape_trace(spec)
    return sum(layer_param_count(layer, shapes[i]) for i, layer in enumerate(spec.layers))


def build_layer(layer: LayerSpec, in_shape, padding: str) -> Layer:
    if layer.kind == "pnn":
        return PnnLayer(in_shape[0], layer.units, layer.kernel, layer.degree, layer.activation, padding)
    if layer.kind == "conv":
        return Conv1D(in_shape[0], layer.units, layer.kernel, layer.activation, padding)
    if layer.kind == "dense":
        return Dense(in_shape[0], layer.units, layer.activation)
    return {"maxpool2": MaxPool2, "upsample2": UpSample2, "flatten": Flatten}[layer.kind]()


@dataclass
class Network:
    spec: NetworkSpec
    seed: int = 0
    layers: list[Layer] = field(init=False)

    def __post_init__(self):
        shapes = [(self.spec.input_channels, self.spec.input_length)] + shape_trace(self.spec)
        self.layers = [build_layer(l, shapes[i], self.spec.padding) for i, l in enumerate(self.spec.layers)]
        self.shapes = shapes
        self.init(self.seed)

    def init(self, seed: int, degree_scaling: bool = True) -> None:
        """Fresh Glorot/d! initialization; each layer gets its own child stream of ``seed``."""
        self.seed = seed
        children = np.random.SeedSequence(seed).spawn(len(self.layers))
        for layer, child in zip(self.layers, children):
            layer.init(np.random.default_rng(child), degree_scaling)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def output_activation(self) -> str | None:
        for layer in reversed(self.layers):
            if hasattr(layer, "activation"):
                return layer.activation.name
        return None

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        n0, m0 = self.spec.input_channels, self.spec.input_length
        if x.ndim == 2 and n0 == 1:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1:] != (n0, m0):
            raise ShapeError(f"network expects input (batch, {n0}, {m0}), got {x.shape}")
        return x

    def forward(self, x):
        """Run every layer in order; returns ``(output, caches)``."""
        a = self._check_input(x)
        caches = []
        for layer in self.layers:
            a, cache = layer.forward(a)
            caches.append(cache)
        return a, caches

    def predict(self, x, batch_size: int = 256):
        x = self._check_input(x)
        outs = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def backward(self, caches, grad_out, preactivation=False, input_grad=False):
        """Sweep from the output layer to the first.

        Returns per-layer gradient lists, or ``(grads, dE/d input)`` when
        ``input_grad`` is set. Without it the sweep stops at the first
        trainable layer.
        """
        if len(caches) != len(self.layers):
            raise ValueError("missing forward cache for this batch")
        grads: list[list[np.ndarray]] = [[] for _ in self.layers]
        g = grad_out
        first_trainable = next((i for i, l in enumerate(self.layers) if l.params), len(self.layers))
        for idx in range(len(self.layers) - 1, -1, -1):
            need = input_grad or idx > first_trainable
            grads[idx], g = self.layers[idx].backward(caches[idx], g, preactivation, need)
            preactivation = False
            if not need:
                break
        return (grads, g) if input_grad else grads

    def flat_params(self) -> np.ndarray:
        if not self.params:
            return np.zeros(0)
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count:
            raise ValueError(f"payload has {flat.size} values, network needs {self.param_count}")
        offset = 0
        for p in self.params:
            p[...] = flat[offset: offset + p.size].reshape(p.shape)
            offset += p.size

    def save(self, path, metadata: dict | None = None) -> None:
        header = json.dumps({"spec": self.spec.to_text(), "seed": self.seed, "meta": metadata or {}},
                            sort_keys=True).encode()
        payload = self.flat_params().astype("<f8").tobytes()
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<II", MODEL_VERSION, len(header)))
            fh.write(header)
            fh.write(payload)

    @classmethod
    def load(cls, path) -> "Network":
        net, _ = load_model(path)
        return net


def load_model(path) -> tuple[Network, dict]:
    """Read a model file; returns the network and its metadata dict."""
    data = Path(path).read_bytes()
    if data[:8] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    header = json.loads(data[16:16 + hlen])
    spec = NetworkSpec.from_text(header["spec"])
    net = Network(spec, header["seed"])
    payload = np.frombuffer(data[16 + hlen:], dtype="<f8")
    if payload.size != param_count(spec):
        raise ValueError(f"{path}: payload length {payload.size} != {param_count(spec)}")
    net.set_flat_params(payload)
    return net, header["meta"]
