"""Minimal define-by-run reverse-mode differentiation over float64 arrays.

Each operation records its parents and a backward closure; backward() walks
the graph in reverse topological order and accumulates gradients, summing
over fan-out. Graphs are rebuilt per sequence.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError):
    pass


class NonScalarRoot(AutodiffError):
    pass


class IndexOutOfRange(AutodiffError):
    pass


class Tensor:
    __slots__ = ("values", "grad", "parents", "_backward", "needs_grad")

    def __init__(self, values, parents=(), backward=None, needs_grad=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.parents = parents
        self._backward = backward
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in parents)
        self.needs_grad = needs_grad
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    def ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, needs_grad={self.needs_grad})"


def constant(values):
    return Tensor(values, needs_grad=False)


def parameter(values):
    return Tensor(values, needs_grad=True)


def backward(root):
    """Populate gradients of every needs_grad ancestor of a scalar root."""
    if root.values.ndim != 0:
        raise NonScalarRoot(f"root has shape {root.values.shape}")
    # iterative post-order topological sort over the needs_grad subgraph
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited or not node.needs_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    root.ensure_grad()
    root.grad += 1.0
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def matmul(a, b):
    av, bv = a.values, b.values
    if av.ndim == 1 and bv.ndim == 2:
        if av.shape[0] != bv.shape[0]:
            raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}")
        out = Tensor(av @ bv, (a, b))

        def _bwd(g):
            if a.needs_grad:
                a.ensure_grad()
                a.grad += bv @ g
            if b.needs_grad:
                b.ensure_grad()
                b.grad += np.outer(av, g)
        out._backward = _bwd
        return out
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}")
        out = Tensor(av @ bv, (a, b))

        def _bwd(g):
            if a.needs_grad:
                a.ensure_grad()
                a.grad += g @ bv.T
            if b.needs_grad:
                b.ensure_grad()
                b.grad += av.T @ g
        out._backward = _bwd
        return out
    raise ShapeMismatch(f"matmul unsupported ranks {av.ndim}, {bv.ndim}")


def add(a, b):
    av, bv = a.values, b.values
    row_broadcast = av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]
    if not row_broadcast and av.shape != bv.shape:
        raise ShapeMismatch(f"add {av.shape} + {bv.shape}")
    out = Tensor(av + bv, (a, b))

    def _bwd(g):
        if a.needs_grad:
            a.ensure_grad()
            a.grad += g
        if b.needs_grad:
            b.ensure_grad()
            b.grad += g.sum(axis=0) if row_broadcast else g
    out._backward = _bwd
    return out


def sub(a, b):
    if a.values.shape != b.values.shape:
        raise ShapeMismatch(f"sub {a.values.shape} - {b.values.shape}")
    out = Tensor(a.values - b.values, (a, b))

    def _bwd(g):
        if a.needs_grad:
            a.ensure_grad()
            a.grad += g
        if b.needs_grad:
            b.ensure_grad()
            b.grad -= g
    out._backward = _bwd
    return out


def mul(a, b):
    if a.values.shape != b.values.shape:
        raise ShapeMismatch(f"mul {a.values.shape} * {b.values.shape}")
    out = Tensor(a.values * b.values, (a, b))

    def _bwd(g):
        if a.needs_grad:
            a.ensure_grad()
            a.grad += g * b.values
        if b.needs_grad:
            b.ensure_grad()
            b.grad += g * a.values
    out._backward = _bwd
    return out


def scale(a, c):
    c = float(c)
    out = Tensor(a.values * c, (a,))

    def _bwd(g):
        if a.needs_grad:
            a.ensure_grad()
            a.grad += g * c
    out._backward = _bwd
    return out


def add_const(a, c):
    out = Tensor(a.values + float(c), (a,))

    def _bwd(g):
        if a.needs_grad:
            a.ensure_grad()
            a.grad += g
    out._backward = _bwd
    return out


def exp(a):
    y = np.exp(a.values)
    out = Tensor(y, (a,))

    def _bwd(g):
        if a.needs_grad:
            a.ensure_grad()
            a.grad += g * y
    out._backward = _bwd
    return out


def tanh(a):
    y = np.empty_like(a.values)
    kernels.tanh(a.values.ravel(), y.ravel())
    out = Tensor(y, (a,))

    def _bwd(g):
        if a.needs_grad:
            kernels.tanh_backward(y.ravel(), np.ascontiguousarray(g).ravel(),
                                  a.ensure_grad().ravel())
    out._backward = _bwd
    return out


def sigmoid(a):
    y = np.empty_like(a.values)
    kernels.sigmoid(a.values.ravel(), y.ravel())
    out = Tensor(y, (a,))

    def _bwd(g):
        if a.needs_grad:
            kernels.sigmoid_backward(y.ravel(), np.ascontiguousarray(g).ravel(),
                                     a.ensure_grad().ravel())
    out._backward = _bwd
    return out


def concat(a, b):
    if a.values.ndim != 1 or b.values.ndim != 1:
        raise ShapeMismatch("concat expects 1-d tensors")
    n = a.values.shape[0]
    out = Tensor(np.concatenate([a.values, b.values]), (a, b))

    def _bwd(g):
        if a.needs_grad:
            a.ensure_grad()
            a.grad += g[:n]
        if b.needs_grad:
            b.ensure_grad()
            b.grad += g[n:]
    out._backward = _bwd
    return out


def narrow(a, start, stop):
    """Contiguous slice of a 1-d tensor."""
    if a.values.ndim != 1:
        raise ShapeMismatch("narrow expects a 1-d tensor")
    out = Tensor(a.values[start:stop].copy(), (a,))

    def _bwd(g):
        if a.needs_grad:
            a.ensure_grad()
            a.grad[start:stop] += g
    out._backward = _bwd
    return out


def embed(table, index):
    if table.values.ndim != 2:
        raise ShapeMismatch("embedding table must be 2-d")
    if not 0 <= index < table.values.shape[0]:
        raise IndexOutOfRange(f"embedding row {index} of {table.values.shape[0]}")
    out = Tensor(table.values[index].copy(), (table,))

    def _bwd(g):
        if table.needs_grad:
            table.ensure_grad()
            table.grad[index] += g
    out._backward = _bwd
    return out


def vsum(a):
    out = Tensor(np.asarray(a.values.sum()), (a,))

    def _bwd(g):
        if a.needs_grad:
            a.ensure_grad()
            a.grad += g
    out._backward = _bwd
    return out


def softmax_cross_entropy(logits, target):
    """loss = logsumexp(logits) - logits[target]; grad = softmax - onehot."""
    lv = logits.values
    if lv.ndim != 1:
        raise ShapeMismatch("logits must be 1-d")
    if not 0 <= target < lv.shape[0]:
        raise IndexOutOfRange(f"target {target} for {lv.shape[0]} logits")
    probs = np.empty_like(lv)
    kernels.softmax(lv, probs)
    m = lv.max()
    loss = m + np.log(np.exp(lv - m).sum()) - lv[target]
    out = Tensor(np.asarray(loss), (logits,))

    def _bwd(g):
        if logits.needs_grad:
            logits.ensure_grad()
            delta = probs.copy()
            delta[target] -= 1.0
            logits.grad += float(g) * delta
    out._backward = _bwd
    return out


def softmax_probs(logits_values, temperature=1.0):
    """Plain softmax over raw values (no graph); used for sampling."""
    scaled = np.asarray(logits_values, dtype=np.float64) / float(temperature)
    probs = np.empty_like(scaled)
    kernels.softmax(scaled, probs)
    return probs
