"""Parity between the compiled kernel backend and the pure-numpy fallback."""

import importlib

import numpy as np
import pytest

from melodygen import _kernels_py as py_impl

cy_impl = None
try:
    cy_impl = importlib.import_module("melodygen._kernels_cy")
except ImportError:
    pass

needs_cython = pytest.mark.skipif(cy_impl is None,
                                  reason="compiled kernels not built")


def _random(n, seed):
    return np.random.default_rng(seed).standard_normal(n)


@needs_cython
@pytest.mark.parametrize("seed", range(5))
def test_sigmoid_tanh_softmax_parity(seed):
    x = _random(257, seed) * 4
    for name in ("sigmoid", "tanh", "softmax"):
        out_py = np.empty_like(x)
        out_cy = np.empty_like(x)
        getattr(py_impl, name)(x, out_py)
        getattr(cy_impl, name)(x, out_cy)
        # libm vs numpy exp differ by ~1 ulp; anything larger is a real bug
        np.testing.assert_allclose(out_cy, out_py, rtol=1e-13, atol=1e-15)


@needs_cython
@pytest.mark.parametrize("seed", range(5))
def test_backward_parity(seed):
    y = np.tanh(_random(129, seed))
    dy = _random(129, seed + 100)
    for name in ("sigmoid_backward", "tanh_backward"):
        dx_py = _random(129, seed + 200).copy()
        dx_cy = dx_py.copy()
        getattr(py_impl, name)(y, dy, dx_py)
        getattr(cy_impl, name)(y, dy, dx_cy)
        np.testing.assert_allclose(dx_cy, dx_py, rtol=1e-14)


@needs_cython
@pytest.mark.parametrize("seed", range(5))
def test_adam_parity(seed):
    rng = np.random.default_rng(seed)
    n = 333
    p_py = rng.standard_normal(n)
    g = rng.standard_normal(n)
    m = rng.standard_normal(n) * 0.1
    v = np.abs(rng.standard_normal(n)) * 0.1
    p_cy, m_cy, v_cy = p_py.copy(), m.copy(), v.copy()
    for t in (1, 2, 10):
        py_impl.adam_update(p_py, g, m, v, 1e-3, 0.9, 0.999, 1e-8, t)
        cy_impl.adam_update(p_cy, g, m_cy, v_cy, 1e-3, 0.9, 0.999, 1e-8, t)
    np.testing.assert_allclose(p_cy, p_py, rtol=1e-13)
    np.testing.assert_allclose(m_cy, m, rtol=1e-13)
    np.testing.assert_allclose(v_cy, v, rtol=1e-13)


def test_softmax_stable_at_large_logits():
    from melodygen import kernels
    x = np.array([1000.0, 999.0, -1000.0])
    out = np.empty(3)
    kernels.softmax(x, out)
    assert np.isfinite(out).all()
    assert out.sum() == pytest.approx(1.0)
