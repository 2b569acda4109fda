"""Random model / pruning-case generators shared by unit and acceptance tests."""
import numpy as np

from prunebench import nn_core, zoo
from prunebench.metrics import AccuracyCurve
from prunebench.planner import synthesize_cosine_schedule, synthesize_step_schedule
from prunebench.graph import LayerSpec as L, ModelGraph

RATIOS = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)


def randomize_bn(model, rng):
    """Non-trivial BN affine params and running stats so pruned channels actually matter."""
    for layer in model.layers:
        if layer.kind != "batchnorm2d":
            continue
        c = layer.out_channels
        model.params[f"{layer.name}.weight"][:] = rng.uniform(0.5, 1.5, c)
        model.params[f"{layer.name}.bias"][:] = rng.normal(0, 0.3, c)
        model.buffers[f"{layer.name}.running_mean"][:] = rng.normal(0, 0.2, c)
        model.buffers[f"{layer.name}.running_var"][:] = rng.uniform(0.5, 2.0, c)
    return model


def spatial_flatten_net(width=6, size=4, seed=0):
    """Prunable conv feeding a flatten over a spatial map, then a linear head."""
    layers = [L("conv1", "conv2d", ("input",), 3, width, 3, 1, 1),
              L("bn1", "batchnorm2d", ("conv1",), width, width),
              L("relu1", "relu", ("bn1",)),
              L("conv2", "conv2d", ("relu1",), width, width, 3, 2, 1, prunable=True, stage=1),
              L("bn2", "batchnorm2d", ("conv2",), width, width, stage=1),
              L("relu2", "relu", ("bn2",), stage=1),
              L("flatten", "flatten", ("relu2",), stage=1),
              L("fc", "linear", ("flatten",), width * (size // 2) ** 2, 5, bias=True, stage=2)]
    return nn_core.init_params(ModelGraph("spatial", (3, size, size), 5, layers), seed)


def random_model(rng):
    kind = rng.integers(0, 4)
    seed = int(rng.integers(0, 2 ** 31))
    if kind == 0:
        m = zoo.build_tiny(num_classes=4, input_size=6, width=int(rng.integers(2, 7)), seed=seed)
    elif kind == 1:
        m = zoo.build_resnet_cifar(8, num_classes=4, input_size=8, width=int(rng.integers(2, 7)),
                                   seed=seed)
    elif kind == 2:
        w = [int(v) for v in rng.integers(2, 9, 3)]
        m = zoo.build_vgg_cifar([w[0], w[1], "M", w[2]], num_classes=4, input_size=8, seed=seed)
    else:
        m = spatial_flatten_net(int(rng.integers(2, 8)), 4, seed)
    return randomize_bn(m, rng)


def random_prune_case(rng):
    """(model, ratio, input batch) with float64 weights for a tight comparison."""
    m = random_model(rng).astype(np.float64)
    ratio = float(rng.choice(RATIOS[1:]))
    x = rng.standard_normal((3,) + m.input_shape)
    return m, ratio, x


def gradcheck_model(rng):
    """Small random zoo model (a few hundred to a few thousand params) in float64.

    BN affine parameters are jittered so the network is not at a symmetric point.
    """
    kind = rng.integers(3)
    seed = int(rng.integers(1e6))
    if kind == 0:
        m = zoo.build_tiny(num_classes=int(rng.integers(2, 6)), input_size=int(rng.integers(5, 8)),
                           width=int(rng.integers(2, 5)), seed=seed)
    elif kind == 1:
        m = zoo.build_resnet_cifar(8, num_classes=3, input_size=int(rng.integers(4, 7)), width=2,
                                   seed=seed)
    else:
        cfg = [int(rng.integers(2, 5)), "M", int(rng.integers(2, 6)), int(rng.integers(2, 6))]
        m = zoo.build_vgg_cifar(cfg, num_classes=3, input_size=int(rng.integers(4, 7)), seed=seed)
    m = m.astype(np.float64)
    for layer in m.layers:
        if layer.kind == "batchnorm2d":
            for n in layer.param_names():
                m.params[n] += 0.3 * rng.standard_normal(m.params[n].shape)
    return m


def random_curve(rng):
    total = int(rng.integers(1, 150))
    if rng.random() < 0.3:
        s = synthesize_cosine_schedule(total, 1e-1, 1e-4)
    else:
        decades = int(rng.integers(0, min(5, total)))
        s = synthesize_step_schedule(total, 1e-1, float(f"1e{-1 - decades}"),
                                     int(rng.integers(1, 40)))
    return AccuracyCurve(rng.uniform(0, 100, total), s)
