"""Recurrent cells built from autodiff primitives.

Both cells expose step(x, state) -> (output, state) with 1-d tensors, so
models can switch cell kind by configuration.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch
from .optim import glorot

FORGET_BIAS_INIT = 1.0
TRANSFORM_BIAS_INIT = -2.0


class LSTMCell:
    """Standard LSTM; gate order i, f, g, o; forget bias starts at 1."""

    def __init__(self, store, name, in_dim, hidden, rng):
        self.in_dim = in_dim
        self.hidden = hidden
        self.W = store.create(f"{name}.W", glorot(rng, (in_dim + hidden, 4 * hidden)))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = FORGET_BIAS_INIT
        self.b = store.create(f"{name}.b", bias)

    def zero_state(self):
        h = ad.constant(np.zeros(self.hidden))
        c = ad.constant(np.zeros(self.hidden))
        return (h, c)

    def step(self, x, state):
        h_prev, c_prev = state
        if x.values.shape != (self.in_dim,):
            raise ShapeMismatch(f"lstm input {x.values.shape}, want ({self.in_dim},)")
        H = self.hidden
        pre = ad.add(ad.matmul(ad.concat(x, h_prev), self.W), self.b)
        i = ad.sigmoid(ad.narrow(pre, 0, H))
        f = ad.sigmoid(ad.narrow(pre, H, 2 * H))
        g = ad.tanh(ad.narrow(pre, 2 * H, 3 * H))
        o = ad.sigmoid(ad.narrow(pre, 3 * H, 4 * H))
        c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        return h, (h, c)

    def make_state(self, h0, c0):
        return (h0, c0)


class RHNCell:
    """Recurrent highway cell with coupled carry gate (carry = 1 - transform).

    The input feeds only the first micro-layer; deeper layers see just the
    running state. Transform-gate bias starts at -2 so early steps carry.
    """

    def __init__(self, store, name, in_dim, hidden, rng, depth=2):
        if depth < 1:
            raise ValueError("transition depth must be >= 1")
        self.in_dim = in_dim
        self.hidden = hidden
        self.depth = depth
        self.Wh = store.create(f"{name}.Wh", glorot(rng, (in_dim, hidden)))
        self.Wt = store.create(f"{name}.Wt", glorot(rng, (in_dim, hidden)))
        self.Rh, self.Rt, self.bh, self.bt = [], [], [], []
        for layer in range(depth):
            self.Rh.append(store.create(f"{name}.Rh{layer}", glorot(rng, (hidden, hidden))))
            self.Rt.append(store.create(f"{name}.Rt{layer}", glorot(rng, (hidden, hidden))))
            self.bh.append(store.create(f"{name}.bh{layer}", np.zeros(hidden)))
            self.bt.append(store.create(
                f"{name}.bt{layer}", np.full(hidden, TRANSFORM_BIAS_INIT)))

    def zero_state(self):
        return ad.constant(np.zeros(self.hidden))

    def step(self, x, state):
        if x.values.shape != (self.in_dim,):
            raise ShapeMismatch(f"rhn input {x.values.shape}, want ({self.in_dim},)")
        s = state
        for layer in range(self.depth):
            h_pre = ad.add(ad.matmul(s, self.Rh[layer]), self.bh[layer])
            t_pre = ad.add(ad.matmul(s, self.Rt[layer]), self.bt[layer])
            if layer == 0:
                h_pre = ad.add(h_pre, ad.matmul(x, self.Wh))
                t_pre = ad.add(t_pre, ad.matmul(x, self.Wt))
            h = ad.tanh(h_pre)
            t = ad.sigmoid(t_pre)
            # s <- s + t * (h - s)  ==  h*t + s*(1-t)
            s = ad.add(s, ad.mul(t, ad.sub(h, s)))
        return s, s

    def make_state(self, s0):
        return s0


def make_cell(kind, store, name, in_dim, hidden, rng, rhn_depth=2):
    if kind == "lstm":
        return LSTMCell(store, name, in_dim, hidden, rng)
    if kind == "rhn":
        return RHNCell(store, name, in_dim, hidden, rng, depth=rhn_depth)
    raise ValueError(f"unknown cell kind: {kind}")
