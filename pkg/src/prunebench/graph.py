"""Layer-graph container shared by the engine, the model zoo and the pruner.

A ``ModelGraph`` is an ordered list of ``LayerSpec`` records. Each layer names
its producers in ``inputs`` (``"input"`` is the graph input), so residual
connections are simply ``add`` layers with two producers. Parameters live in a
flat ``name -> ndarray`` store keyed ``"<layer>.<param>"``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

LAYER_KINDS = ("conv2d", "linear", "batchnorm2d", "relu", "avgpool", "maxpool", "add", "flatten")

# conv roles inside residual blocks
NON_BLOCK = "non-block"
BLOCK_FIRST = "block-internal-first"
BLOCK_MID = "block-internal-mid"
BLOCK_LAST = "block-internal-second/last"
CLASSIFIER = "classifier"

INPUT = "input"


class GraphError(ValueError):
    """Raised for malformed graphs or tensors that do not fit a layer."""

    def __init__(self, layer: str, message: str):
        super().__init__(f"layer {layer!r}: {message}")
        self.layer = layer


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: Tuple[str, ...] = ()
    # conv2d / linear (features) / batchnorm2d (channels)
    in_channels: int = 0
    out_channels: int = 0
    # conv2d / pools; kernel_size 0 on avgpool means global pooling
    kernel_size: int = 1
    stride: int = 1
    padding: int = 0
    bias: bool = False
    role: str = NON_BLOCK
    prunable: bool = False
    stage: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise GraphError(self.name, f"unknown layer kind {self.kind!r}")

    def param_names(self) -> List[str]:
        if self.kind in ("conv2d", "linear"):
            names = [f"{self.name}.weight"]
            if self.bias:
                names.append(f"{self.name}.bias")
            return names
        if self.kind == "batchnorm2d":
            return [f"{self.name}.weight", f"{self.name}.bias"]
        return []

    def buffer_names(self) -> List[str]:
        if self.kind == "batchnorm2d":
            return [f"{self.name}.running_mean", f"{self.name}.running_var"]
        return []

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        if self.kind == "conv2d":
            shapes = {f"{self.name}.weight": (self.out_channels, self.in_channels,
                                              self.kernel_size, self.kernel_size)}
        elif self.kind == "linear":
            shapes = {f"{self.name}.weight": (self.out_channels, self.in_channels)}
        elif self.kind == "batchnorm2d":
            return {f"{self.name}.weight": (self.out_channels,),
                    f"{self.name}.bias": (self.out_channels,)}
        else:
            return {}
        if self.bias:
            shapes[f"{self.name}.bias"] = (self.out_channels,)
        return shapes


@dataclass
class ModelGraph:
    name: str
    input_shape: Tuple[int, int, int]
    num_classes: int
    layers: Tuple[LayerSpec, ...]
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self._index = {layer.name: i for i, layer in enumerate(self.layers)}
        if len(self._index) != len(self.layers):
            raise GraphError(self.name, "duplicate layer names")

    @property
    def output(self) -> str:
        return self.layers[-1].name

    @property
    def materialized(self) -> bool:
        return bool(self.params)

    def layer(self, name: str) -> LayerSpec:
        try:
            return self.layers[self._index[name]]
        except KeyError:
            raise KeyError(f"no layer named {name!r} in {self.name}") from None

    def convs(self) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer.kind == "conv2d"]

    def consumers(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {INPUT: []}
        for layer in self.layers:
            out.setdefault(layer.name, [])
            for src in layer.inputs:
                out.setdefault(src, []).append(layer.name)
        return out

    @property
    def residual_edges(self) -> List[Tuple[str, str]]:
        return [(src, layer.name) for layer in self.layers if layer.kind == "add"
                for src in layer.inputs]

    def trainable_names(self) -> List[str]:
        return [n for layer in self.layers for n in layer.param_names()]

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for layer in self.layers
                   for s in layer.param_shapes().values())

    def state(self) -> Dict[str, np.ndarray]:
        """Parameters and buffers in layer order (checkpoint payload)."""
        out = {}
        for layer in self.layers:
            for n in layer.param_names():
                out[n] = self.params[n]
            for n in layer.buffer_names():
                out[n] = self.buffers[n]
        return out

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for layer in self.layers:
            for n in layer.param_names() + layer.buffer_names():
                if n not in state:
                    raise GraphError(layer.name, f"missing tensor {n!r} in state")
                expected = layer.param_shapes().get(n, (layer.out_channels,))
                if tuple(state[n].shape) != tuple(expected):
                    raise GraphError(layer.name, f"tensor {n!r} has shape {state[n].shape}, "
                                                 f"expected {expected}")
                target = self.params if n in layer.param_names() else self.buffers
                target[n] = np.array(state[n], dtype=np.float32)

    def copy(self) -> "ModelGraph":
        return ModelGraph(self.name, self.input_shape, self.num_classes, self.layers,
                          {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> "ModelGraph":
        g = self.copy()
        g.params = {k: v.astype(dtype) for k, v in g.params.items()}
        g.buffers = {k: v.astype(dtype) for k, v in g.buffers.items()}
        return g

    def with_layers(self, layers) -> "ModelGraph":
        """Same graph identity with replaced layer specs and no parameters."""
        return ModelGraph(self.name, self.input_shape, self.num_classes, tuple(layers))


def infer_shapes(model: ModelGraph, input_shape=None) -> Dict[str, Tuple[int, ...]]:
    """Per-sample output shape of every layer; raises GraphError on mismatch."""
    shapes: Dict[str, Tuple[int, ...]] = {INPUT: tuple(input_shape or model.input_shape)}
    for layer in model.layers:
        ins = []
        for src in layer.inputs:
            if src not in shapes:
                raise GraphError(layer.name, f"input {src!r} is not produced before this layer")
            ins.append(shapes[src])
        if layer.kind != "add" and len(ins) != 1:
            raise GraphError(layer.name, f"expects one input, got {len(ins)}")
        shapes[layer.name] = _layer_shape(layer, ins)
    return shapes


def _layer_shape(layer: LayerSpec, ins):
    k = layer.kind
    if k == "add":
        if len(ins) != 2:
            raise GraphError(layer.name, f"add needs exactly two inputs, got {len(ins)}")
        if ins[0] != ins[1]:
            raise GraphError(layer.name, f"add inputs disagree: {ins[0]} vs {ins[1]}")
        return ins[0]
    s = ins[0]
    if k == "flatten":
        return (int(np.prod(s)),)
    if k == "linear":
        if len(s) != 1 or s[0] != layer.in_channels:
            raise GraphError(layer.name, f"expects {layer.in_channels} features, got shape {s}")
        return (layer.out_channels,)
    if len(s) != 3:
        raise GraphError(layer.name, f"expects a (C, H, W) input, got shape {s}")
    c, h, w = s
    if k == "relu":
        return s
    if k == "batchnorm2d":
        if c != layer.out_channels:
            raise GraphError(layer.name, f"expects {layer.out_channels} channels, got {c}")
        return s
    if k == "conv2d":
        if c != layer.in_channels:
            raise GraphError(layer.name, f"expects {layer.in_channels} input channels, got {c}")
        ho, wo = _out_hw(layer, h, w)
        return (layer.out_channels, ho, wo)
    if k == "avgpool" and layer.kernel_size == 0:
        return (c, 1, 1)
    ho, wo = _out_hw(layer, h, w)
    return (c, ho, wo)


def _out_hw(layer: LayerSpec, h: int, w: int):
    ho = (h + 2 * layer.padding - layer.kernel_size) // layer.stride + 1
    wo = (w + 2 * layer.padding - layer.kernel_size) // layer.stride + 1
    if ho < 1 or wo < 1:
        raise GraphError(layer.name, f"kernel {layer.kernel_size} does not fit a {h}x{w} input")
    return ho, wo

