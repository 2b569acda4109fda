"""Static MAC / parameter accounting and speedup between two graphs.

Only conv and linear layers cost MACs; batchnorm, ReLU, pooling and adds are
counted as zero. The ``"2xMAC"`` convention doubles every entry, which is how
some papers report "FLOPs".
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .graph import GraphError, ModelGraph, infer_shapes

CONVENTIONS = {"MAC": 1, "2xMAC": 2}


@dataclass(frozen=True)
class FlopsReport:
    macs: Dict[str, int]
    params: Dict[str, int]
    convention: str = "MAC"

    @property
    def total(self) -> int:
        return sum(self.macs.values())

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    def rows(self) -> List[Tuple[str, int, int]]:
        return [(name, self.macs[name], self.params[name]) for name in self.macs]

    def to_convention(self, convention: str) -> "FlopsReport":
        scale = CONVENTIONS[convention] / CONVENTIONS[self.convention]
        return FlopsReport({k: int(v * scale) for k, v in self.macs.items()}, dict(self.params),
                           convention)

    def table(self) -> str:
        width = max([len(n) for n in self.macs] + [5])
        lines = [f"{'layer':<{width}}  {self.convention:>14}"]
        lines += [f"{n:<{width}}  {m:>14,d}" for n, m in self.macs.items() if m]
        lines.append(f"{'total':<{width}}  {self.total:>14,d}")
        lines.append(f"{'params':<{width}}  {self.total_params:>14,d}")
        return "\n".join(lines)


def count(model: ModelGraph, input_shape=None, convention: str = "MAC") -> FlopsReport:
    """Per-layer MACs and parameter counts for one sample."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; use one of {list(CONVENTIONS)}")
    factor = CONVENTIONS[convention]
    shapes = infer_shapes(model, input_shape)
    macs, params = {}, {}
    for layer in model.layers:
        out = shapes[layer.name]
        if layer.kind == "conv2d":
            if len(out) != 3:
                raise GraphError(layer.name, f"unresolvable conv output shape {out}")
            oc, oh, ow = out
            m = oc * oh * ow * layer.in_channels * layer.kernel_size ** 2
        elif layer.kind == "linear":
            m = layer.in_channels * layer.out_channels
        else:
            m = 0
        macs[layer.name] = factor * m
        params[layer.name] = sum(int(np.prod(s)) for s in layer.param_shapes().values())
    return FlopsReport(macs, params, convention)


def speedup(dense: FlopsReport, pruned: FlopsReport) -> float:
    """k = F1 / F2."""
    if dense.convention != pruned.convention:
        raise ValueError(f"convention mismatch: {dense.convention} vs {pruned.convention}")
    if pruned.total <= 0:
        raise ValueError("pruned model has no MACs")
    return dense.total / pruned.total
