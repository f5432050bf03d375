"""Pure-numpy kernel backend. Mirrors _kernels_cy exactly."""

import numpy as np

NAME = "python"


def sigmoid(x, out):
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)


def sigmoid_backward(y, dy, dx):
    # dx += dy * y * (1 - y)
    dx += dy * y * (1.0 - y)


def tanh(x, out):
    np.tanh(x, out=out)


def tanh_backward(y, dy, dx):
    # dx += dy * (1 - y^2)
    dx += dy * (1.0 - y * y)


def softmax(logits, out):
    np.subtract(logits, logits.max(), out=out)
    np.exp(out, out=out)
    out /= out.sum()


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
