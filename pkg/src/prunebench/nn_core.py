"""Deterministic numpy training engine for ``ModelGraph``.

Convolutions run as im2col + one GEMM; everything else is plain array code.
The engine computes in the dtype of the model parameters (float32 for
training, float64 is handy for gradient checks).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .graph import INPUT, GraphError, LayerSpec, ModelGraph

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class NonFiniteLossError(FloatingPointError):
    def __init__(self, loss, batch_index=None):
        where = "" if batch_index is None else f" at batch {batch_index}"
        super().__init__(f"non-finite loss {loss}{where}")
        self.batch_index = batch_index


# --------------------------------------------------------------------- init

def init_params(model: ModelGraph, seed=0) -> ModelGraph:
    """Fill ``model.params``/``model.buffers`` in place from the layer shapes.

    conv: He-normal with fan-in ``C*k*k``; linear: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    for weight and bias; batchnorm: scale 1, shift 0, running stats (0, 1).
    """
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for layer in model.layers:
        if layer.kind == "conv2d":
            fan_in = layer.in_channels * layer.kernel_size ** 2
            shape = (layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size)
            params[f"{layer.name}.weight"] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
            if layer.bias:
                params[f"{layer.name}.bias"] = np.zeros(layer.out_channels, np.float32)
        elif layer.kind == "linear":
            bound = 1.0 / np.sqrt(layer.in_channels)
            params[f"{layer.name}.weight"] = rng.uniform(
                -bound, bound, (layer.out_channels, layer.in_channels)).astype(np.float32)
            if layer.bias:
                params[f"{layer.name}.bias"] = rng.uniform(-bound, bound, layer.out_channels).astype(np.float32)
        elif layer.kind == "batchnorm2d":
            c = layer.out_channels
            params[f"{layer.name}.weight"] = np.ones(c, np.float32)
            params[f"{layer.name}.bias"] = np.zeros(c, np.float32)
            buffers[f"{layer.name}.running_mean"] = np.zeros(c, np.float32)
            buffers[f"{layer.name}.running_var"] = np.ones(c, np.float32)
    model.params, model.buffers = params, buffers
    return model


# ------------------------------------------------------------------ kernels
# Activations are NHWC inside the engine so that im2col rows and their
# adjoint scatter move contiguous channel runs. Conv weights keep the
# (out, in, kH, kW) layout.

def _pad(x, p, value=0.0):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)), constant_values=value)


def _out_hw(h, w, k, stride, padding):
    return (h + 2 * padding - k) // stride + 1, (w + 2 * padding - k) // stride + 1


def _im2col(x, k, stride, padding):
    """(N, H, W, C) -> (N, ho, wo, k, k, C) patch tensor (a fresh array)."""
    n, h, w, c = x.shape
    ho, wo = _out_hw(h, w, k, stride, padding)
    xp = _pad(x, padding)
    cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols


def _col2im(dcols, x_shape, stride, padding):
    """Adjoint of ``_im2col``: accumulate patch gradients back onto the input."""
    n, h, w, c = x_shape
    _, ho, wo, k, _, _ = dcols.shape
    dxp = np.zeros((n, h + 2 * padding, w + 2 * padding, c), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    if padding:
        dxp = dxp[:, padding:padding + h, padding:padding + w, :]
    return dxp


def _weight_matrix(weight):
    # (O, C, k, k) -> (k*k*C, O), matching the (k, k, C) patch order
    o = weight.shape[0]
    return weight.transpose(2, 3, 1, 0).reshape(-1, o)


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    n, h, w, c = x.shape
    o, _, k, _ = weight.shape
    ho, wo = _out_hw(h, w, k, stride, padding)
    if k == 1 and padding == 0:
        cols = np.ascontiguousarray(x[:, ::stride, ::stride, :]).reshape(n * ho * wo, c)
    else:
        cols = _im2col(x, k, stride, padding).reshape(n * ho * wo, k * k * c)
    out = cols @ _weight_matrix(weight)
    if bias is not None:
        out += bias
    return out.reshape(n, ho, wo, o), cols


def conv2d_backward(dout, cols, x_shape, weight, stride=1, padding=0, need_dx=True):
    n, h, w, c = x_shape
    o, _, k, _ = weight.shape
    _, ho, wo, _ = dout.shape
    g = dout.reshape(n * ho * wo, o)
    dw = (cols.T @ g).reshape(k, k, c, o).transpose(3, 2, 0, 1)
    db = g.sum(axis=0)
    if not need_dx:
        return None, np.ascontiguousarray(dw), db
    dcols = g @ _weight_matrix(weight).T
    if k == 1 and padding == 0:
        dx = np.zeros(x_shape, dtype=dout.dtype)
        dx[:, ::stride, ::stride, :] = dcols.reshape(n, ho, wo, c)
    else:
        dx = _col2im(dcols.reshape(n, ho, wo, k, k, c), x_shape, stride, padding)
    return dx, np.ascontiguousarray(dw), db


def batchnorm_forward(x, gamma, beta, mean, var, train, running=None, update_stats=True):
    if train:
        mu = x.mean(axis=(0, 1, 2))
        sigma2 = x.var(axis=(0, 1, 2))
        if update_stats and running is not None:
            m = x.shape[0] * x.shape[1] * x.shape[2]
            rm, rv = running
            rm *= 1 - BN_MOMENTUM
            rm += BN_MOMENTUM * mu
            rv *= 1 - BN_MOMENTUM
            rv += BN_MOMENTUM * sigma2 * (m / max(m - 1, 1))
    else:
        mu, sigma2 = mean, var
    inv_std = (1.0 / np.sqrt(sigma2 + BN_EPS)).astype(x.dtype)
    xhat = (x - mu) * inv_std
    out = xhat * gamma + beta
    return out, (xhat, inv_std, train)


def batchnorm_backward(dout, gamma, ctx):
    xhat, inv_std, train = ctx
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    m = dout.shape[0] * dout.shape[1] * dout.shape[2]
    dx = m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
    dx *= inv_std / m
    return dx, dgamma, dbeta


def maxpool_forward(x, k, stride, padding):
    n, h, w, c = x.shape
    cols = _im2col(_pad(x, padding, -np.inf), k, stride, 0)
    _, ho, wo = cols.shape[:3]
    cols = cols.reshape(n, ho, wo, k * k, c)
    arg = cols.argmax(axis=3)
    out = np.take_along_axis(cols, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, arg


def maxpool_backward(dout, arg, x_shape, k, stride, padding):
    n, ho, wo, c = dout.shape
    onehot = (arg[:, :, :, None, :] == np.arange(k * k)[:, None]).astype(dout.dtype)
    dcols = (onehot * dout[:, :, :, None, :]).reshape(n, ho, wo, k, k, c)
    h, w = x_shape[1], x_shape[2]
    dxp = _col2im(dcols, (n, h + 2 * padding, w + 2 * padding, c), stride, 0)
    if padding:
        dxp = dxp[:, padding:padding + h, padding:padding + w, :]
    return dxp


def avgpool_forward(x, k, stride):
    if k == 0:
        return x.mean(axis=(1, 2), keepdims=True)
    n, h, w, c = x.shape
    cols = _im2col(x, k, stride, 0)
    return cols.mean(axis=(3, 4))


def avgpool_backward(dout, x_shape, k, stride):
    n, h, w, c = x_shape
    if k == 0:
        return np.broadcast_to(dout / (h * w), x_shape).copy()
    dcols = np.broadcast_to((dout / (k * k))[:, :, :, None, None, :], dout.shape[:3] + (k, k, c))
    return _col2im(dcols, x_shape, stride, 0)


# ---------------------------------------------------------------- graph run

def _run(model: ModelGraph, batch, train: bool, update_stats: bool, keep_cache: bool):
    p = model.params
    if not p:
        raise GraphError(model.name, "model parameters are not materialized")
    dtype = next(iter(p.values())).dtype
    x = np.asarray(batch, dtype=dtype)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(model.input_shape):
        first = model.layers[0].name
        raise GraphError(first, f"batch shape {x.shape[1:]} does not match model input {model.input_shape}")
    acts = {INPUT: np.ascontiguousarray(x.transpose(0, 2, 3, 1))}
    caches = {}
    for layer in model.layers:
        xs = [acts[s] for s in layer.inputs]
        out, ctx = _layer_forward(model, layer, xs, train, update_stats)
        acts[layer.name] = out
        if keep_cache:
            caches[layer.name] = ctx
    return acts, caches


def _layer_forward(model, layer: LayerSpec, xs, train, update_stats):
    k = layer.kind
    p = model.params
    x = xs[0]
    if k not in ("add", "linear") and x.ndim != 4:
        raise GraphError(layer.name, f"expects a 4-d input, got shape {x.shape}")
    if k == "conv2d":
        w = p[f"{layer.name}.weight"]
        if x.shape[3] != w.shape[1]:
            raise GraphError(layer.name, f"expects {w.shape[1]} input channels, got {x.shape[3]}")
        out, cols = conv2d_forward(x, w, p.get(f"{layer.name}.bias"), layer.stride, layer.padding)
        return out, (cols, x.shape)
    if k == "batchnorm2d":
        g = p[f"{layer.name}.weight"]
        if x.shape[3] != g.shape[0]:
            raise GraphError(layer.name, f"expects {g.shape[0]} channels, got {x.shape[3]}")
        rm = model.buffers[f"{layer.name}.running_mean"]
        rv = model.buffers[f"{layer.name}.running_var"]
        return batchnorm_forward(x, g, p[f"{layer.name}.bias"], rm, rv, train, (rm, rv), update_stats)
    if k == "relu":
        mask = x > 0
        return x * mask, mask
    if k == "add":
        if xs[0].shape != xs[1].shape:
            raise GraphError(layer.name, f"cannot add {xs[0].shape} and {xs[1].shape}")
        return xs[0] + xs[1], None
    if k == "flatten":
        # features are ordered (C, H, W) as in the NCHW convention
        return x.transpose(0, 3, 1, 2).reshape(x.shape[0], -1), x.shape
    if k == "linear":
        w = p[f"{layer.name}.weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise GraphError(layer.name, f"expects {w.shape[1]} features, got shape {x.shape}")
        out = x @ w.T
        b = p.get(f"{layer.name}.bias")
        if b is not None:
            out += b
        return out, x
    if k == "maxpool":
        out, arg = maxpool_forward(x, layer.kernel_size, layer.stride, layer.padding)
        return out, (arg, x.shape)
    if k == "avgpool":
        return avgpool_forward(x, layer.kernel_size, layer.stride), x.shape
    raise GraphError(layer.name, f"unsupported kind {k}")


def forward(model: ModelGraph, batch, train=False, update_stats=None) -> np.ndarray:
    """Logits of shape (batch, num_classes).

    ``train`` selects batch statistics in batchnorm; running statistics are
    updated only when ``update_stats`` (defaults to ``train``).
    """
    if update_stats is None:
        update_stats = train
    acts, _ = _run(model, batch, train, update_stats, keep_cache=False)
    return acts[model.output]


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


def backward(model: ModelGraph, batch, labels, *, train=True, update_stats=True,
             batch_index=None) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and gradient of every trainable parameter for one batch."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= model.num_classes:
        raise ValueError(f"labels must lie in [0, {model.num_classes})")
    acts, caches = _run(model, batch, train, update_stats, keep_cache=True)
    loss, dlogits = cross_entropy(acts[model.output], labels)
    if not np.isfinite(loss):
        raise NonFiniteLossError(loss, batch_index)

    grads: Dict[str, np.ndarray] = {}
    upstream = {model.output: dlogits.astype(acts[model.output].dtype)}
    # which activations need an input gradient at all
    needs_dx = _needs_input_grad(model)
    for layer in reversed(model.layers):
        dout = upstream.pop(layer.name, None)
        if dout is None:
            continue
        dxs = _layer_backward(model, layer, dout, caches[layer.name], grads, needs_dx[layer.name])
        for src, dx in zip(layer.inputs, dxs):
            if dx is None or src == INPUT:
                continue
            if src in upstream:
                upstream[src] = upstream[src] + dx
            else:
                upstream[src] = dx
    return loss, grads


def _needs_input_grad(model):
    # a layer needs dx unless all of its inputs are the raw graph input
    return {layer.name: any(s != INPUT for s in layer.inputs) for layer in model.layers}


def _layer_backward(model, layer, dout, ctx, grads, need_dx):
    k = layer.kind
    p = model.params
    if k == "conv2d":
        cols, x_shape = ctx
        w = p[f"{layer.name}.weight"]
        dx, dw, db = conv2d_backward(dout, cols, x_shape, w, layer.stride, layer.padding, need_dx)
        grads[f"{layer.name}.weight"] = dw
        if layer.bias:
            grads[f"{layer.name}.bias"] = db
        return [dx]
    if k == "batchnorm2d":
        dx, dg, db = batchnorm_backward(dout, p[f"{layer.name}.weight"], ctx)
        grads[f"{layer.name}.weight"] = dg
        grads[f"{layer.name}.bias"] = db
        return [dx]
    if k == "relu":
        return [dout * ctx]
    if k == "add":
        return [dout, dout]
    if k == "flatten":
        n, h, w, c = ctx
        return [dout.reshape(n, c, h, w).transpose(0, 2, 3, 1)]
    if k == "linear":
        x = ctx
        w = p[f"{layer.name}.weight"]
        grads[f"{layer.name}.weight"] = dout.T @ x
        if layer.bias:
            grads[f"{layer.name}.bias"] = dout.sum(axis=0)
        return [dout @ w if need_dx else None]
    if k == "maxpool":
        arg, x_shape = ctx
        return [maxpool_backward(dout, arg, x_shape, layer.kernel_size, layer.stride, layer.padding)]
    if k == "avgpool":
        return [avgpool_backward(dout, ctx, layer.kernel_size, layer.stride)]
    raise GraphError(layer.name, f"unsupported kind {k}")


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimizerState):
    """Momentum SGD with coupled weight decay, in place.

    v <- m*v + g + wd*w ;  w <- w - lr*v
    """
    lr = state.learning_rate
    for name, g in grads.items():
        w = params[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {w.shape}")
        d = g + state.weight_decay * w if state.weight_decay else g.copy()
        v = state.velocity.get(name)
        if v is None:
            v = d
        else:
            if v.shape != w.shape:
                raise ValueError(f"velocity for {name} has shape {v.shape}, parameter has {w.shape}")
            v *= state.momentum
            v += d
        state.velocity[name] = v.astype(w.dtype, copy=False)
        w -= (lr * state.velocity[name]).astype(w.dtype, copy=False)
    return params, state
