"""Benchmark architectures as ``ModelGraph`` objects.

CIFAR-style ResNets (depth 6n+2) and VGGs are trainable. ResNet34/50 at
224x224 are structural only: their parameters are never materialized, they
exist for MAC and speedup arithmetic.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

from .graph import (BLOCK_FIRST, BLOCK_LAST, BLOCK_MID, CLASSIFIER, INPUT,
                    LayerSpec, ModelGraph, infer_shapes)
from .nn_core import init_params

VGG_CONFIGS = {
    "vgg11": [64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512],
    "vgg13": [64, 64, "M", 128, 128, "M", 256, 256, "M", 512, 512, "M", 512, 512],
    "vgg16": [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512],
    "vgg19": [64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512, "M",
              512, 512, 512, 512],
}


class _Builder:
    def __init__(self, in_channels):
        self.layers: List[LayerSpec] = []
        self.channels = {INPUT: in_channels}
        self.last = INPUT

    def _add(self, spec: LayerSpec, channels):
        self.layers.append(spec)
        self.channels[spec.name] = channels
        self.last = spec.name
        return spec.name

    def conv(self, name, out, k, stride=1, padding=None, src=None, bias=False, **tags):
        src = src or self.last
        if padding is None:
            padding = k // 2
        return self._add(LayerSpec(name, "conv2d", (src,), self.channels[src], out, k, stride,
                                   padding, bias, **tags), out)

    def bn(self, name, src=None, stage=0):
        src = src or self.last
        c = self.channels[src]
        return self._add(LayerSpec(name, "batchnorm2d", (src,), c, c, stage=stage), c)

    def relu(self, name, src=None, stage=0):
        src = src or self.last
        return self._add(LayerSpec(name, "relu", (src,), stage=stage), self.channels[src])

    def add(self, name, a, b, stage=0):
        return self._add(LayerSpec(name, "add", (a, b), stage=stage), self.channels[a])

    def pool(self, name, kind, k, stride=None, padding=0, src=None, stage=0):
        src = src or self.last
        return self._add(LayerSpec(name, kind, (src,), kernel_size=k,
                                   stride=stride or max(k, 1), padding=padding, stage=stage),
                         self.channels[src])

    def flatten(self, name, features, stage=0):
        return self._add(LayerSpec(name, "flatten", (self.last,), stage=stage), features)

    def linear(self, name, out, stage=0, role=CLASSIFIER):
        src = self.last
        return self._add(LayerSpec(name, "linear", (src,), self.channels[src], out, bias=True,
                                   role=role, stage=stage), out)


def _finish(name, b: _Builder, input_shape, num_classes, seed) -> ModelGraph:
    g = ModelGraph(name, tuple(input_shape), num_classes, b.layers)
    infer_shapes(g)  # validates channel consistency along every path
    if seed is not None:
        init_params(g, seed)
    return g


def build_resnet_cifar(depth: int, num_classes: int = 10, input_size: int = 32,
                       width: int = 16, seed: Optional[int] = 0) -> ModelGraph:
    """CIFAR ResNet with three stages of ``(depth-2)/6`` basic blocks.

    Shortcuts are identity except where the width changes, where a strided
    1x1 conv + BN projects. The first conv of each block is prunable; the
    second conv, the shortcut, the stem and the classifier are spared.
    """
    if depth < 8 or (depth - 2) % 6:
        raise ValueError(f"CIFAR ResNet depth must be 6n+2 with n >= 1, got {depth}")
    n = (depth - 2) // 6
    b = _Builder(3)
    b.conv("conv1", width, 3)
    b.bn("bn1")
    b.relu("relu1")
    in_planes = width
    for s, planes in enumerate((width, 2 * width, 4 * width), start=1):
        for i in range(n):
            stride = 2 if (s > 1 and i == 0) else 1
            p = f"layer{s}.{i}"
            entry = b.last
            b.conv(f"{p}.conv1", planes, 3, stride, role=BLOCK_FIRST, prunable=True, stage=s)
            b.bn(f"{p}.bn1", stage=s)
            b.relu(f"{p}.relu1", stage=s)
            b.conv(f"{p}.conv2", planes, 3, 1, role=BLOCK_LAST, stage=s)
            main = b.bn(f"{p}.bn2", stage=s)
            if stride != 1 or in_planes != planes:
                b.conv(f"{p}.shortcut.conv", planes, 1, stride, 0, src=entry, stage=s)
                short = b.bn(f"{p}.shortcut.bn", stage=s)
            else:
                short = entry
            b.add(f"{p}.add", main, short, stage=s)
            b.relu(f"{p}.relu2", stage=s)
            in_planes = planes
    b.pool("avgpool", "avgpool", 0, stage=4)
    b.flatten("flatten", in_planes, stage=4)
    b.linear("fc", num_classes, stage=4)
    return _finish(f"resnet{depth}", b, (3, input_size, input_size), num_classes, seed)


def build_vgg_cifar(config: Union[str, Sequence], num_classes: int = 100,
                    input_size: int = 32, seed: Optional[int] = 0) -> ModelGraph:
    """Plain VGG: 3x3 conv+BN+ReLU, "M" = 2x2 maxpool, then avgpool, flatten, linear."""
    name = config if isinstance(config, str) else "vgg-custom"
    cfg = VGG_CONFIGS[config] if isinstance(config, str) else list(config)
    if not any(isinstance(c, int) for c in cfg):
        raise ValueError("VGG config needs at least one conv width")
    b = _Builder(3)
    n_conv = n_pool = 0
    for c in cfg:
        if c == "M":
            n_pool += 1
            b.pool(f"pool{n_pool}", "maxpool", 2, 2)
            continue
        n_conv += 1
        b.conv(f"conv{n_conv}", int(c), 3, prunable=n_conv > 1)
        b.bn(f"bn{n_conv}")
        b.relu(f"relu{n_conv}")
    width = b.channels[b.last]
    b.pool("avgpool", "avgpool", 0)
    b.flatten("flatten", width)
    b.linear("fc", num_classes)
    return _finish(name, b, (3, input_size, input_size), num_classes, seed)


def build_tiny(num_classes: int = 10, input_size: int = 8, width: int = 8,
               in_channels: int = 3, seed: Optional[int] = 0) -> ModelGraph:
    """Two-conv net for fast tests; the second conv is prunable."""
    b = _Builder(in_channels)
    b.conv("conv1", width, 3)
    b.bn("bn1")
    b.relu("relu1")
    b.conv("conv2", 2 * width, 3, prunable=True, stage=1)
    b.bn("bn2", stage=1)
    b.relu("relu2", stage=1)
    b.conv("conv3", 2 * width, 3, 2, stage=1)
    b.bn("bn3", stage=1)
    b.relu("relu3", stage=1)
    b.pool("avgpool", "avgpool", 0)
    b.flatten("flatten", 2 * width)
    b.linear("fc", num_classes)
    return _finish("tiny", b, (in_channels, input_size, input_size), num_classes, seed)


def build_static_resnet_imagenet(depth: int, num_classes: int = 1000) -> ModelGraph:
    """ResNet34 (basic blocks) or ResNet50 (bottlenecks, stride on the 3x3) at 3x224x224.

    Layer ``stage`` follows the 6-slot ratio-vector layout
    ``[first conv, stage1, stage2, stage3, stage4, classifier]``. In
    bottlenecks both internal convs are prunable and the last 1x1 is spared.
    """
    blocks = {34: (3, 4, 6, 3), 50: (3, 4, 6, 3)}
    if depth not in blocks:
        raise ValueError(f"static ImageNet ResNet depth must be 34 or 50, got {depth}")
    bottleneck = depth == 50
    expansion = 4 if bottleneck else 1
    b = _Builder(3)
    b.conv("conv1", 64, 7, 2, 3)
    b.bn("bn1")
    b.relu("relu1")
    b.pool("maxpool", "maxpool", 3, 2, 1)
    in_planes = 64
    for s, (planes, n) in enumerate(zip((64, 128, 256, 512), blocks[depth]), start=1):
        for i in range(n):
            stride = 2 if (s > 1 and i == 0) else 1
            p = f"layer{s}.{i}"
            entry = b.last
            out = planes * expansion
            if bottleneck:
                b.conv(f"{p}.conv1", planes, 1, 1, 0, role=BLOCK_FIRST, prunable=True, stage=s)
                b.bn(f"{p}.bn1", stage=s)
                b.relu(f"{p}.relu1", stage=s)
                b.conv(f"{p}.conv2", planes, 3, stride, role=BLOCK_MID, prunable=True, stage=s)
                b.bn(f"{p}.bn2", stage=s)
                b.relu(f"{p}.relu2", stage=s)
                b.conv(f"{p}.conv3", out, 1, 1, 0, role=BLOCK_LAST, stage=s)
                main = b.bn(f"{p}.bn3", stage=s)
            else:
                b.conv(f"{p}.conv1", planes, 3, stride, role=BLOCK_FIRST, prunable=True, stage=s)
                b.bn(f"{p}.bn1", stage=s)
                b.relu(f"{p}.relu1", stage=s)
                b.conv(f"{p}.conv2", planes, 3, 1, role=BLOCK_LAST, stage=s)
                main = b.bn(f"{p}.bn2", stage=s)
            if stride != 1 or in_planes != out:
                b.conv(f"{p}.downsample.conv", out, 1, stride, 0, src=entry, stage=s)
                short = b.bn(f"{p}.downsample.bn", stage=s)
            else:
                short = entry
            b.add(f"{p}.add", main, short, stage=s)
            b.relu(f"{p}.relu_out", stage=s)
            in_planes = out
    b.pool("avgpool", "avgpool", 0, stage=5)
    b.flatten("flatten", in_planes, stage=5)
    b.linear("fc", num_classes, stage=5)
    return _finish(f"resnet{depth}-imagenet", b, (3, 224, 224), num_classes, seed=None)


# ---------------------------------------------------------------- registry

@dataclass(frozen=True)
class ZooEntry:
    name: str
    builder: Callable[..., ModelGraph]
    kwargs: tuple
    num_classes: int
    input_size: int
    expected_params: int
    expected_macs: int
    trainable: bool = True

    def build(self, num_classes=None, input_size=None, seed: Optional[int] = 0) -> ModelGraph:
        kw = dict(self.kwargs)
        if not self.trainable:
            return self.builder(num_classes=num_classes or self.num_classes, **kw)
        return self.builder(num_classes=num_classes or self.num_classes,
                            input_size=input_size or self.input_size, seed=seed, **kw)


# expected counts are frozen outputs of flops.count at the reference input
ZOO: Dict[str, ZooEntry] = {e.name: e for e in [
    ZooEntry("tiny", build_tiny, (), 10, 8, 3_922, 124_576),
    ZooEntry("resnet8", build_resnet_cifar, (("depth", 8),), 10, 32, 78_042, 12_501_632),
    ZooEntry("resnet14", build_resnet_cifar, (("depth", 14),), 10, 32, 175_258, 26_657_408),
    ZooEntry("resnet20", build_resnet_cifar, (("depth", 20),), 10, 32, 272_474, 40_813_184),
    ZooEntry("resnet32", build_resnet_cifar, (("depth", 32),), 10, 32, 466_906, 69_124_736),
    ZooEntry("resnet56", build_resnet_cifar, (("depth", 56),), 10, 32, 855_770, 125_747_840),
    ZooEntry("vgg11", build_vgg_cifar, (("config", "vgg11"),), 100, 32, 9_274_532, 152_815_616),
    ZooEntry("vgg13", build_vgg_cifar, (("config", "vgg13"),), 100, 32, 9_459_236, 228_313_088),
    ZooEntry("vgg16", build_vgg_cifar, (("config", "vgg16"),), 100, 32, 14_770_212, 313_247_744),
    ZooEntry("vgg19", build_vgg_cifar, (("config", "vgg19"),), 100, 32, 20_081_188, 398_182_400),
    ZooEntry("resnet34-imagenet", build_static_resnet_imagenet, (("depth", 34),), 1000, 224,
             21_797_672, 3_663_761_408, trainable=False),
    ZooEntry("resnet50-imagenet", build_static_resnet_imagenet, (("depth", 50),), 1000, 224,
             25_557_032, 4_089_184_256, trainable=False),
]}


def build(name: str, num_classes=None, input_size=None, seed: Optional[int] = 0) -> ModelGraph:
    """Build a zoo model by name; ``resnet<6n+2>`` outside the table also works."""
    if name in ZOO:
        return ZOO[name].build(num_classes, input_size, seed)
    m = re.fullmatch(r"resnet(\d+)", name)
    if m:
        return build_resnet_cifar(int(m.group(1)), num_classes or 10, input_size or 32, seed=seed)
    raise KeyError(f"unknown zoo model {name!r}; known: {', '.join(ZOO)}")
