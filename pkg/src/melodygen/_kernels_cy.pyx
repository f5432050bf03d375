# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: fused elementwise loops for the training hot
path. Semantics match _kernels_py to within float64 rounding."""

from libc.math cimport exp as c_exp, tanh as c_tanh, sqrt as c_sqrt, pow as c_pow

NAME = "cython"


def sigmoid(double[::1] x, double[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = 1.0 / (1.0 + c_exp(-x[i]))


def sigmoid_backward(double[::1] y, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t i, n = y.shape[0]
    for i in range(n):
        dx[i] += dy[i] * y[i] * (1.0 - y[i])


def tanh(double[::1] x, double[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = c_tanh(x[i])


def tanh_backward(double[::1] y, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t i, n = y.shape[0]
    for i in range(n):
        dx[i] += dy[i] * (1.0 - y[i] * y[i])


def softmax(double[::1] logits, double[::1] out):
    cdef Py_ssize_t i, n = logits.shape[0]
    cdef double m = logits[0]
    cdef double total = 0.0
    for i in range(1, n):
        if logits[i] > m:
            m = logits[i]
    for i in range(n):
        out[i] = c_exp(logits[i] - m)
        total += out[i]
    for i in range(n):
        out[i] /= total


def adam_update(double[::1] param, double[::1] grad, double[::1] m,
                double[::1] v, double lr, double beta1, double beta2,
                double eps, long t):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double bc1 = 1.0 - c_pow(beta1, t)
    cdef double bc2 = 1.0 - c_pow(beta2, t)
    cdef double m_hat, v_hat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        m_hat = m[i] / bc1
        v_hat = v[i] / bc2
        param[i] -= lr * m_hat / (c_sqrt(v_hat) + eps)
