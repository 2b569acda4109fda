"""L1-norm structured filter pruning with small-dense reconstruction.

``plan`` picks the kept output channels of every prunable conv and derives
the induced input slices of the layers downstream of it. ``rebuild_small_dense``
turns a plan into a physically narrower graph; ``apply_mask`` is the
large-sparse twin used as an equivalence oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Dict, List, Optional, Sequence

import numpy as np

from .graph import CLASSIFIER, INPUT, GraphError, LayerSpec, ModelGraph, infer_shapes

# layers that pass channels through unchanged
_CHANNELWISE = ("batchnorm2d", "relu", "avgpool", "maxpool")


@dataclass(frozen=True)
class PruneConfig:
    """Uniform ``ratio`` for every prunable conv, or a per-stage ``stage_ratios`` vector.

    ``stage_ratios`` is indexed by ``LayerSpec.stage``; entries for spared
    layers (stem, classifier) must be 0. ``criterion="random"`` ranks filters
    by a seeded permutation and exists only as an ablation.
    """
    ratio: float = 0.0
    stage_ratios: Optional[Sequence[float]] = None
    criterion: str = "l1"
    seed: int = 0

    def __post_init__(self):
        ratios = [self.ratio] if self.stage_ratios is None else list(self.stage_ratios)
        for r in ratios:
            if not 0 <= r < 1:
                raise ValueError(f"pruning ratio must lie in [0, 1), got {r}")
        if self.criterion not in ("l1", "random"):
            raise ValueError(f"unknown criterion {self.criterion!r}")

    def ratio_for(self, layer: LayerSpec) -> float:
        if self.stage_ratios is None:
            return self.ratio
        if layer.stage >= len(self.stage_ratios):
            raise ValueError(f"stage ratio vector too short for stage {layer.stage} ({layer.name})")
        return float(self.stage_ratios[layer.stage])


def kept_count(channels: int, ratio: float) -> int:
    """max(1, floor((1 - r) * C + 0.5)), evaluated on the decimal value of ``ratio``."""
    keep = (1 - Decimal(str(ratio))) * channels + Decimal("0.5")
    return max(1, int(keep.to_integral_value(rounding="ROUND_FLOOR")))


def l1_rank(weight: np.ndarray):
    """Per-filter L1 norms and filter indices sorted by descending norm (ties: lower index first)."""
    if weight.ndim != 4:
        raise ValueError(f"expected a rank-4 conv weight, got shape {weight.shape}")
    norms = np.abs(weight.astype(np.float64)).sum(axis=(1, 2, 3))
    order = np.argsort(-norms, kind="stable")
    return norms, order


@dataclass
class KeepPlan:
    filters: Dict[str, np.ndarray]          # prunable conv -> kept output channels
    inputs: Dict[str, np.ndarray] = field(default_factory=dict)   # dependent layer -> kept inputs
    channels: Dict[str, np.ndarray] = field(default_factory=dict)  # batchnorm -> kept channels

    def to_dict(self) -> Dict[str, Dict[str, List[int]]]:
        return {"filters": {k: v.tolist() for k, v in self.filters.items()},
                "inputs": {k: v.tolist() for k, v in self.inputs.items()},
                "channels": {k: v.tolist() for k, v in self.channels.items()}}

    @classmethod
    def from_dict(cls, d) -> "KeepPlan":
        conv = lambda m: {k: np.asarray(v, dtype=np.int64) for k, v in m.items()}
        return cls(conv(d["filters"]), conv(d.get("inputs", {})), conv(d.get("channels", {})))


def plan(model: ModelGraph, cfg: PruneConfig) -> KeepPlan:
    """Choose kept filters per prunable conv and propagate them downstream.

    Unmaterialized (structure-only) graphs keep the leading ``k`` filters,
    which is enough for MAC accounting.
    """
    rng = np.random.default_rng(cfg.seed)
    filters = {}
    for layer in model.layers:
        if layer.kind != "conv2d":
            continue
        r = cfg.ratio_for(layer)
        if not layer.prunable:
            if cfg.stage_ratios is not None and r and _is_spared_stage(model, layer):
                raise ValueError(f"spared layer {layer.name} was given ratio {r}")
            continue
        c = layer.out_channels
        k = kept_count(c, r)
        if k < 1:
            raise ValueError(f"{layer.name} would keep no filters")
        if cfg.criterion == "random":
            order = rng.permutation(c)
        elif model.materialized:
            _, order = l1_rank(model.params[f"{layer.name}.weight"])
        else:
            order = np.arange(c)
        filters[layer.name] = np.sort(order[:k])
    if cfg.stage_ratios is not None:
        for layer in model.layers:
            if layer.kind == "linear" and cfg.ratio_for(layer):
                raise ValueError(f"spared layer {layer.name} was given ratio {cfg.ratio_for(layer)}")
    return propagate(model, filters)


def _is_spared_stage(model, layer):
    # the stem conv and classifier own their own slots in stage vectors
    stages = {l.stage for l in model.layers if l.prunable}
    return layer.stage not in stages


def propagate(model: ModelGraph, filters: Dict[str, np.ndarray]) -> KeepPlan:
    """Derive induced input / batchnorm slices from per-conv filter keeps."""
    shapes = infer_shapes(model)
    full = {}  # layer -> kept output channels (None = all)
    inputs, channels = {}, {}
    for layer in model.layers:
        src = layer.inputs[0] if layer.inputs else INPUT
        upstream = full.get(src) if src != INPUT else None
        if layer.kind == "conv2d":
            if upstream is not None:
                inputs[layer.name] = upstream
            keep = filters.get(layer.name)
            if keep is not None:
                keep = np.asarray(keep, dtype=np.int64)
                if keep.size == 0 or keep.max() >= layer.out_channels or len(np.unique(keep)) != keep.size:
                    raise ValueError(f"invalid keep set for {layer.name}")
                if keep.size == layer.out_channels:
                    keep = None
            full[layer.name] = keep
        elif layer.kind in _CHANNELWISE:
            if layer.kind == "batchnorm2d" and upstream is not None:
                channels[layer.name] = upstream
            full[layer.name] = upstream
        elif layer.kind == "add":
            for s in layer.inputs:
                if full.get(s) is not None:
                    raise GraphError(layer.name, f"pruned channels of {s!r} reach a residual add")
            full[layer.name] = None
        elif layer.kind == "flatten":
            if upstream is not None:
                c, h, w = shapes[src]
                hw = h * w
                upstream = (upstream[:, None] * hw + np.arange(hw)[None, :]).ravel()
            full[layer.name] = upstream
        elif layer.kind == "linear":
            if upstream is not None:
                inputs[layer.name] = upstream
            full[layer.name] = None
    kept = {k: np.asarray(v, dtype=np.int64) for k, v in filters.items()}
    return KeepPlan(kept, inputs, channels)


def pruned_layers(model: ModelGraph, keep: KeepPlan) -> List[LayerSpec]:
    """Layer specs of the small-dense graph implied by ``keep``."""
    layers = []
    for layer in model.layers:
        changes = {}
        if layer.name in keep.filters:
            changes["out_channels"] = int(keep.filters[layer.name].size)
        if layer.name in keep.inputs:
            changes["in_channels"] = int(keep.inputs[layer.name].size)
        if layer.name in keep.channels:
            n = int(keep.channels[layer.name].size)
            changes["in_channels"] = changes["out_channels"] = n
        layers.append(replace(layer, **changes) if changes else layer)
    return layers


def prune_architecture(model: ModelGraph, keep: KeepPlan) -> ModelGraph:
    """Small-dense graph structure only (no parameters), e.g. for scratch training."""
    g = model.with_layers(pruned_layers(model, keep))
    infer_shapes(g)
    return g


def rebuild_small_dense(model: ModelGraph, keep: KeepPlan) -> ModelGraph:
    """New narrower graph with weights, biases and BN state copied through the keep indices."""
    g = prune_architecture(model, keep)
    if not model.materialized:
        return g
    params, buffers = {}, {}
    for layer in model.layers:
        out_idx = keep.filters.get(layer.name, keep.channels.get(layer.name))
        in_idx = keep.inputs.get(layer.name)
        for n in layer.param_names() + layer.buffer_names():
            src = model.params[n] if n in model.params else model.buffers[n]
            t = src
            if out_idx is not None:
                t = t[out_idx]
            if in_idx is not None and n.endswith(".weight") and layer.kind in ("conv2d", "linear"):
                t = t[:, in_idx]
            t = np.ascontiguousarray(t, dtype=src.dtype)
            (params if n in model.params else buffers)[n] = t.copy() if t is src else t
    g.params, g.buffers = params, buffers
    expected = {n: s for l in g.layers for n, s in l.param_shapes().items()}
    for n, s in expected.items():
        if params[n].shape != s:
            raise GraphError(n.rsplit(".", 1)[0], f"inconsistent plan: {n} is {params[n].shape}, spec says {s}")
    return g


def apply_mask(model: ModelGraph, keep: KeepPlan) -> ModelGraph:
    """Large-sparse oracle: zero pruned filters, their BN scale/shift and downstream input slices.

    Mutates ``model`` in place (pass a copy if the original is still needed).
    Architecture and MAC count are unchanged.
    """
    for layer in model.layers:
        out_idx = keep.filters.get(layer.name, keep.channels.get(layer.name))
        if out_idx is not None:
            drop = np.setdiff1d(np.arange(layer.out_channels), out_idx)
            for n in layer.param_names():
                model.params[n][drop] = 0
        in_idx = keep.inputs.get(layer.name)
        if in_idx is not None:
            drop = np.setdiff1d(np.arange(layer.in_channels), in_idx)
            model.params[f"{layer.name}.weight"][:, drop] = 0
    return model


def is_spared(layer: LayerSpec) -> bool:
    return layer.kind == "linear" or layer.role == CLASSIFIER or not layer.prunable
