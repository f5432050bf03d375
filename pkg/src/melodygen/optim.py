"""Parameter storage, Adam, seeded RNG, and checkpoint serialization."""

from __future__ import annotations

import math
import struct

import numpy as np

from . import kernels
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"MGCK"
CHECKPOINT_VERSION = 1


class OptimError(Exception):
    pass


class MissingGradient(OptimError):
    pass


class CheckpointError(OptimError):
    pass


class RngStream:
    """Seeded PCG64 stream; identical seed gives identical draws anywhere."""

    def __init__(self, seed):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape):
        return self.gen.uniform(low, high, shape)

    def normal(self, shape):
        return self.gen.standard_normal(shape)

    def random(self):
        return self.gen.random()

    def integers(self, n):
        return int(self.gen.integers(n))

    def shuffle(self, seq):
        self.gen.shuffle(seq)


def glorot(rng, shape):
    """uniform(-a, a), a = sqrt(6 / (fan_in + fan_out))."""
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else shape[0]
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


class ParameterStore:
    """Named parameters with per-parameter Adam moments."""

    def __init__(self):
        self.params = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def create(self, name, values):
        if name in self.params:
            raise OptimError(f"duplicate parameter {name}")
        t = Tensor(np.array(values, dtype=np.float64), needs_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.values)
        self.v[name] = np.zeros_like(t.values)
        return t

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def names(self):
        return list(self.params)


def adam_step(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, grad_scale=1.0):
    """One bias-corrected Adam update over every parameter in the store."""
    store.step += 1
    for name, p in store.params.items():
        if p.grad is None:
            raise MissingGradient(name)
        if grad_scale != 1.0:
            p.grad *= grad_scale
        kernels.adam_update(p.values.ravel(), p.grad.ravel(),
                            store.m[name].ravel(), store.v[name].ravel(),
                            lr, beta1, beta2, eps, store.step)


def save_checkpoint(path, store, seed, extras=None):
    """version tag + rng seed + string extras + (name, shape, f64 LE) entries."""
    extras = extras or {}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, seed))
        fh.write(struct.pack("<I", len(extras)))
        for key, value in extras.items():
            kb, vb = key.encode(), str(value).encode()
            fh.write(struct.pack("<HI", len(kb), len(vb)) + kb + vb)
        fh.write(struct.pack("<I", len(store.params)))
        for name, p in store.params.items():
            nb = name.encode()
            arr = np.ascontiguousarray(p.values, dtype="<f8")
            fh.write(struct.pack("<HB", len(nb), arr.ndim) + nb)
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (ordered {name: ndarray}, seed, extras)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a melodygen checkpoint")
    version, seed = struct.unpack_from("<IQ", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    (n_extras,) = struct.unpack_from("<I", data, pos)
    pos += 4
    extras = {}
    for _ in range(n_extras):
        klen, vlen = struct.unpack_from("<HI", data, pos)
        pos += 6
        key = data[pos:pos + klen].decode()
        pos += klen
        extras[key] = data[pos:pos + vlen].decode()
        pos += vlen
    (n_params,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = {}
    for _ in range(n_params):
        nlen, ndim = struct.unpack_from("<HB", data, pos)
        pos += 3
        name = data[pos:pos + nlen].decode()
        pos += nlen
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        params[name] = arr.reshape(shape).copy()
    return params, seed, extras


def restore_store(params):
    """Rebuild a ParameterStore (fresh moments) from loaded arrays."""
    store = ParameterStore()
    for name, values in params.items():
        store.create(name, values)
    return store
