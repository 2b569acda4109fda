"""Datasets: CIFAR binary batches or a seeded synthetic image task.

Dataset specs are short strings so they can live in a manifest::

    synthetic:classes=10,train=2000,test=1000,size=16,seed=0
    cifar10:path=/data/cifar-10-batches-bin,train=10000,test=2000

Images are float32 NCHW, normalized per channel with train-set statistics.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy import ndimage

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"

_SYNTHETIC_DEFAULTS = dict(classes=10, train=2000, test=1000, size=16, seed=0,
                           noise=0.6, distract=0.5, shift=3)


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.train_x.shape[1:])


def parse_spec(spec: str) -> Tuple[str, Dict[str, str]]:
    kind, _, rest = spec.partition(":")
    opts = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise DatasetError(f"malformed dataset option {item!r} in {spec!r}")
        opts[key.strip()] = value.strip()
    if kind not in ("synthetic", "cifar10"):
        raise DatasetError(f"unknown dataset kind {kind!r}")
    return kind, opts


def describe(spec: str) -> Dict[str, int]:
    """Static facts of a spec (no data is read): classes, image size, train/test counts."""
    kind, opts = parse_spec(spec)
    if kind == "synthetic":
        o = {**_SYNTHETIC_DEFAULTS, **opts}
        return dict(classes=int(o["classes"]), size=int(o["size"]), train=int(o["train"]),
                    test=int(o["test"]))
    return dict(classes=10, size=32, train=int(opts.get("train", 50000)),
                test=int(opts.get("test", 10000)))


def load_dataset(spec: str) -> Dataset:
    kind, opts = parse_spec(spec)
    if kind == "synthetic":
        o = {**_SYNTHETIC_DEFAULTS, **opts}
        tx, ty, vx, vy = make_synthetic(int(o["classes"]), int(o["train"]), int(o["test"]),
                                        int(o["size"]), int(o["seed"]), float(o["noise"]),
                                        float(o["distract"]), int(o["shift"]))
        n_cls = int(o["classes"])
    else:
        if "path" not in opts:
            raise DatasetError("cifar10 spec needs path=<directory of binary batches>")
        tx, ty, vx, vy = load_cifar10(opts["path"])
        tx, ty = tx[:int(opts.get("train", len(tx)))], ty[:int(opts.get("train", len(ty)))]
        vx, vy = vx[:int(opts.get("test", len(vx)))], vy[:int(opts.get("test", len(vy)))]
        n_cls = 10
    tx, vx = normalize(tx, vx)
    return Dataset(spec, tx, ty, vx, vy, n_cls)


def normalize(train_x, test_x):
    mean = train_x.mean(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
    std = train_x.std(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
    std[std == 0] = 1
    f = lambda x: ((x - mean) / std).astype(np.float32)
    return f(train_x), f(test_x)


# -------------------------------------------------------------------- CIFAR

def read_cifar_records(raw: bytes, source="<bytes>"):
    """Decode concatenated 3073-byte records into (uint8 images N x 3 x 32 x 32, labels)."""
    n, tail = divmod(len(raw), CIFAR_RECORD)
    if tail:
        raise DatasetError(f"{source}: truncated record at byte offset {n * CIFAR_RECORD} "
                           f"({tail} of {CIFAR_RECORD} bytes)")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = arr[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DatasetError(f"{source}: label {labels[bad[0]]} out of range at byte offset "
                           f"{bad[0] * CIFAR_RECORD}")
    return arr[:, 1:].reshape(n, 3, 32, 32), labels


def load_cifar10(path):
    def read(name):
        f = os.path.join(path, name)
        if not os.path.exists(f):
            raise FileNotFoundError(f"CIFAR-10 batch not found: {f}")
        with open(f, "rb") as fh:
            return read_cifar_records(fh.read(), f)
    parts = [read(n) for n in CIFAR_TRAIN_FILES]
    tx = np.concatenate([p[0] for p in parts]).astype(np.float32) / 255
    ty = np.concatenate([p[1] for p in parts])
    vx, vy = read(CIFAR_TEST_FILE)
    return tx, ty, vx.astype(np.float32) / 255, vy


# ---------------------------------------------------------------- synthetic

def _smooth_field(rng, channels, size, coarse):
    low = rng.standard_normal((channels, coarse, coarse))
    field = ndimage.zoom(low, (1, size / coarse, size / coarse), order=3, mode="grid-wrap",
                         grid_mode=True)
    field -= field.mean()
    return field / field.std()


def make_synthetic(classes=10, n_train=2000, n_test=1000, size=16, seed=0, noise=0.6,
                   distract=0.5, shift=3):
    """Class prototypes (smooth random colour fields) seen through nuisance factors.

    Each sample is its class prototype, cyclically shifted by up to ``shift``
    pixels, scaled by a random contrast, blended with a random other class's
    prototype (weight up to ``distract``) and corrupted with pixel noise.
    """
    rng = np.random.default_rng(seed)
    coarse = max(2, size // 4)
    protos = np.stack([_smooth_field(rng, 3, size, coarse) + 0.5 * _smooth_field(rng, 3, size, size // 2)
                       for _ in range(classes)])

    def draw(n, r):
        y = r.integers(0, classes, n)
        other = (y + r.integers(1, classes, n)) % classes
        x = np.empty((n, 3, size, size))
        dx = r.integers(-shift, shift + 1, (n, 2))
        for i in range(n):
            x[i] = np.roll(protos[y[i]], tuple(dx[i]), axis=(1, 2))
        x *= r.uniform(0.7, 1.3, (n, 1, 1, 1))
        x += r.uniform(0, distract, (n, 1, 1, 1)) * protos[other]
        x += noise * r.standard_normal(x.shape)
        return x.astype(np.float32), y.astype(np.int64)

    tx, ty = draw(n_train, np.random.default_rng([seed, 1]))
    vx, vy = draw(n_test, np.random.default_rng([seed, 2]))
    return tx, ty, vx, vy


# ------------------------------------------------------------- augmentation

def augment(x, rng, pad=4, flip=True):
    """Random crop after zero padding plus horizontal flip, one draw per sample."""
    n, c, h, w = x.shape
    out = np.empty_like(x)
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        oy = rng.integers(0, 2 * pad + 1, n)
        ox = rng.integers(0, 2 * pad + 1, n)
        for i in range(n):
            out[i] = xp[i, :, oy[i]:oy[i] + h, ox[i]:ox[i] + w]
    else:
        out[:] = x
    if flip:
        f = rng.random(n) < 0.5
        out[f] = out[f, :, :, ::-1]
    return out
