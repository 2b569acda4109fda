"""Slow, independent reference implementations used only by the tests.

Nothing here shares code with the engine: convolution is a literal loop
nest, shapes are tracked by hand, and MACs are counted one multiply at a time.
"""
import math

import numpy as np


def direct_conv(x, w, stride=1, padding=0):
    """Loop-nest NCHW convolution (cross-correlation), float64."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[b, oc, i, j] = float(np.sum(patch * w[oc]))
    return out


def reference_forward(model, x):
    """Eval-mode forward of a ModelGraph written against NCHW with plain loops/numpy."""
    acts = {"input": np.asarray(x, dtype=np.float64)}
    p = {k: v.astype(np.float64) for k, v in model.params.items()}
    buf = {k: v.astype(np.float64) for k, v in model.buffers.items()}
    for layer in model.layers:
        a = acts[layer.inputs[0]]
        name = layer.name
        if layer.kind == "conv2d":
            y = direct_conv(a, p[f"{name}.weight"], layer.stride, layer.padding)
            if layer.bias:
                y += p[f"{name}.bias"][None, :, None, None]
        elif layer.kind == "batchnorm2d":
            s = (None, slice(None), None, None)
            y = (a - buf[f"{name}.running_mean"][s]) / np.sqrt(buf[f"{name}.running_var"][s] + 1e-5)
            y = y * p[f"{name}.weight"][s] + p[f"{name}.bias"][s]
        elif layer.kind == "relu":
            y = np.where(a > 0, a, 0.0)
        elif layer.kind == "add":
            y = a + acts[layer.inputs[1]]
        elif layer.kind == "avgpool" and layer.kernel_size == 0:
            y = a.mean(axis=(2, 3), keepdims=True)
        elif layer.kind in ("avgpool", "maxpool"):
            k, st, pad = layer.kernel_size, layer.stride, layer.padding
            n, c, h, w = a.shape
            fill = -np.inf if layer.kind == "maxpool" else 0.0
            ap = np.full((n, c, h + 2 * pad, w + 2 * pad), fill)
            ap[:, :, pad:pad + h, pad:pad + w] = a
            ho, wo = (h + 2 * pad - k) // st + 1, (w + 2 * pad - k) // st + 1
            y = np.zeros((n, c, ho, wo))
            for i in range(ho):
                for j in range(wo):
                    win = ap[:, :, i * st:i * st + k, j * st:j * st + k]
                    y[:, :, i, j] = win.max(axis=(2, 3)) if layer.kind == "maxpool" else win.mean(axis=(2, 3))
        elif layer.kind == "flatten":
            y = a.reshape(a.shape[0], -1)
        elif layer.kind == "linear":
            y = a @ p[f"{name}.weight"].T
            if layer.bias:
                y = y + p[f"{name}.bias"]
        else:
            raise AssertionError(layer.kind)
        acts[name] = y
    return acts[model.output]


def loop_nest_macs(model, input_shape):
    """Count multiply-accumulates by literally walking every output element's inner loop."""
    shapes = {"input": tuple(input_shape)}
    total = 0
    for layer in model.layers:
        s = shapes[layer.inputs[0]]
        if layer.kind == "conv2d":
            c, h, w = s
            k, st, pad = layer.kernel_size, layer.stride, layer.padding
            ho, wo = (h + 2 * pad - k) // st + 1, (w + 2 * pad - k) // st + 1
            for _oc in range(layer.out_channels):
                for _i in range(ho):
                    for _j in range(wo):
                        for _ic in range(c):
                            total += k * k
            shapes[layer.name] = (layer.out_channels, ho, wo)
        elif layer.kind == "linear":
            for _o in range(layer.out_channels):
                total += s[0]
            shapes[layer.name] = (layer.out_channels,)
        elif layer.kind == "flatten":
            shapes[layer.name] = (int(np.prod(s)),)
        elif layer.kind in ("avgpool", "maxpool"):
            c, h, w = s
            if layer.kernel_size == 0:
                shapes[layer.name] = (c, 1, 1)
            else:
                k, st, pad = layer.kernel_size, layer.stride, layer.padding
                shapes[layer.name] = (c, (h + 2 * pad - k) // st + 1, (w + 2 * pad - k) // st + 1)
        else:
            shapes[layer.name] = s
    return total


def resnet_cifar_params(depth, num_classes=10, width=16):
    """Closed-form parameter count of the CIFAR ResNet (projection shortcuts where shape changes)."""
    n = (depth - 2) // 6
    w = [width, 2 * width, 4 * width]
    total = 3 * 9 * w[0] + 2 * w[0]                     # stem conv + bn
    cin = w[0]
    for s, c in enumerate(w):
        for i in range(n):
            total += cin * 9 * c + 2 * c + c * 9 * c + 2 * c
            if cin != c:
                total += cin * c + 2 * c                  # 1x1 projection + bn
            cin = c
    return total + w[2] * num_classes + num_classes


def vgg_params(cfg, num_classes, in_channels=3):
    total, c = 0, in_channels
    for v in cfg:
        if v == "M":
            continue
        total += c * 9 * v + 2 * v
        c = v
    return total + c * num_classes + num_classes


def naive_l1_order(weight):
    norms = [float(np.abs(weight[i]).sum()) for i in range(weight.shape[0])]
    idx = list(range(len(norms)))
    # selection sort: largest first, lower index wins ties
    out = []
    while idx:
        best = idx[0]
        for j in idx[1:]:
            if norms[j] > norms[best]:
                best = j
        out.append(best)
        idx.remove(best)
    return out


def two_pass_std(values):
    n = len(values)
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    return mean, math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))


def central_difference(f, w, eps=1e-3):
    """Numerical gradient of scalar f() w.r.t. array w (perturbed in place)."""
    g = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        old = w[idx]
        w[idx] = old + eps
        hi = f()
        w[idx] = old - eps
        lo = f()
        w[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def activation_pattern(model, x):
    """Which side of every ReLU / max-pool decision each activation sits on.

    Central differences are only valid when both probes stay on the same
    piece of the piecewise-linear network; this fingerprint detects crossings.
    """
    import hashlib
    from prunebench import nn_core
    _, caches = nn_core._run(model, x, train=True, update_stats=False, keep_cache=True)
    h = hashlib.sha256()
    for layer in model.layers:
        if layer.kind == "relu":
            h.update(np.packbits(caches[layer.name]).tobytes())
        elif layer.kind == "maxpool":
            h.update(caches[layer.name][0].astype(np.int64).tobytes())
    return h.digest()


def kink_aware_difference(loss_fn, pattern_fn, w, eps=1e-3, min_eps=1e-7):
    """Central differences at ``eps``; coordinates whose probes cross a kink are
    retried with eps/10 until they do not (or ``min_eps`` is reached).

    Returns (gradient, number of coordinates that needed a smaller step).
    """
    base = pattern_fn()
    g = np.zeros_like(w)
    refined = 0
    for idx in np.ndindex(w.shape):
        old = w[idx]
        e = eps
        while True:
            w[idx] = old + e
            hi, phi = loss_fn(), pattern_fn()
            w[idx] = old - e
            lo, plo = loss_fn(), pattern_fn()
            w[idx] = old
            if (phi == base and plo == base) or e <= min_eps:
                break
            e /= 10
        refined += e < eps
        g[idx] = (hi - lo) / (2 * e)
    return g, refined


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| scaled by the larger of the two tensors' max magnitudes (floored)."""
    scale = max(float(np.abs(analytic).max()), float(np.abs(numeric).max()), floor)
    return float(np.abs(analytic - numeric).max()) / scale


def halving_starts(total, n_stages, cap=30):
    """Stage start epochs by the halving rule, written recursively.

    Each stage but the last takes ceil(rest / 2) epochs, at most ``cap``, and
    always leaves at least one epoch per later stage.
    """
    if n_stages == 1:
        return [0]
    first = min(cap, (total + 1) // 2, total - (n_stages - 1))
    return [0] + [first + s for s in halving_starts(total - first, n_stages - 1, cap)]


def trainability_oracle(accs, first_stage):
    """Eq.-style average over the first stage, accumulated left to right in float64."""
    total = 0.0
    for a in accs[:first_stage]:
        total += a
    return total / first_stage
