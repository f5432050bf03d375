import numpy as np
import pytest

from melodygen import autodiff as ad
from melodygen.autodiff import backward
from melodygen.cells import LSTMCell, RHNCell, make_cell
from melodygen.optim import (
    MissingGradient, ParameterStore, RngStream, adam_step, glorot,
    load_checkpoint, save_checkpoint,
)

EPS = 1e-5
TOL = 1e-4


def _loss_through_cell(cell_factory, flat_params, x_arrays, n_steps):
    """Rebuild the cell with given parameter values and run n unrolled steps."""
    store, cell = cell_factory()
    pos = 0
    for name in store.names():
        p = store.params[name]
        size = p.values.size
        p.values[...] = flat_params[pos:pos + size].reshape(p.values.shape)
        pos += size
    state = cell.zero_state()
    total = None
    for t in range(n_steps):
        out, state = cell.step(ad.constant(x_arrays[t]), state)
        sq = ad.vsum(ad.mul(out, out))
        total = sq if total is None else ad.add(total, sq)
    return store, cell, total


def check_cell_gradients(cell_factory, in_dim, n_steps=5, seed=0):
    rng = np.random.default_rng(seed)
    store0, _ = cell_factory()
    total_size = sum(p.values.size for p in store0.params.values())
    flat = rng.standard_normal(total_size) * 0.4
    xs = [rng.standard_normal(in_dim) * 0.5 for _ in range(n_steps)]

    store, cell, loss = _loss_through_cell(cell_factory, flat, xs, n_steps)
    backward(loss)
    analytic = np.concatenate([store.params[n].grad.ravel()
                               for n in store.names()])

    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + EPS
        _, _, up = _loss_through_cell(cell_factory, flat, xs, n_steps)
        flat[i] = orig - EPS
        _, _, down = _loss_through_cell(cell_factory, flat, xs, n_steps)
        flat[i] = orig
        fd[i] = (float(up.values) - float(down.values)) / (2 * EPS)

    err = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1.0)
    assert err.max() < TOL, f"max relative error {err.max()}"


class TestLSTMCell:
    def _factory(self, in_dim=3, hidden=4, seed=1):
        def make():
            store = ParameterStore()
            cell = LSTMCell(store, "c", in_dim, hidden, RngStream(seed))
            return store, cell
        return make

    def test_zero_params_zero_inputs(self):
        store = ParameterStore()
        cell = LSTMCell(store, "c", 3, 4, RngStream(0))
        cell.W.values[...] = 0.0
        cell.b.values[...] = 0.0
        h, (h2, c) = cell.step(ad.constant(np.zeros(3)), cell.zero_state())
        assert np.allclose(h.values, 0.0)
        assert np.allclose(c.values, 0.0)

    def test_forget_bias_initialized_to_one(self):
        store = ParameterStore()
        cell = LSTMCell(store, "c", 3, 4, RngStream(0))
        assert np.allclose(cell.b.values[4:8], 1.0)
        assert np.allclose(cell.b.values[:4], 0.0)

    def test_memory_carry_under_forced_gates(self):
        # huge forget bias ~ f=1, huge negative input bias ~ i=0: c' = c
        store = ParameterStore()
        cell = LSTMCell(store, "c", 2, 3, RngStream(0))
        cell.W.values[...] = 0.0
        cell.b.values[...] = 0.0
        cell.b.values[3:6] = 50.0   # forget open
        cell.b.values[0:3] = -50.0  # input closed
        c0 = np.array([1.5, -2.0, 0.75])
        state = (ad.constant(np.zeros(3)), ad.constant(c0))
        _, (_, c1) = cell.step(ad.constant(np.zeros(2)), state)
        assert np.allclose(c1.values, c0, atol=1e-12)

    def test_gradients_through_five_steps(self):
        check_cell_gradients(self._factory(), in_dim=3, n_steps=5)


class TestRHNCell:
    def _factory(self, in_dim=3, hidden=4, depth=3, seed=2):
        def make():
            store = ParameterStore()
            cell = RHNCell(store, "c", in_dim, hidden, RngStream(seed),
                           depth=depth)
            return store, cell
        return make

    def test_transform_bias_negative_two(self):
        store = ParameterStore()
        cell = RHNCell(store, "c", 3, 4, RngStream(0), depth=2)
        for layer in range(2):
            assert np.allclose(cell.bt[layer].values, -2.0)

    def test_pure_carry_when_transform_closed(self):
        store = ParameterStore()
        cell = RHNCell(store, "c", 2, 3, RngStream(0), depth=3)
        for layer in range(3):
            cell.Rt[layer].values[...] = 0.0
            cell.bt[layer].values[...] = -50.0  # t ~ 0 everywhere
        cell.Wt.values[...] = 0.0
        s0 = np.array([0.3, -0.6, 1.2])
        out, _ = cell.step(ad.constant(np.ones(2)), ad.constant(s0))
        assert np.allclose(out.values, s0, atol=1e-12)

    def test_depth_one_transform_open_is_pure_tanh_path(self):
        store = ParameterStore()
        cell = RHNCell(store, "c", 2, 3, RngStream(0), depth=1)
        cell.Rt[0].values[...] = 0.0
        cell.Wt.values[...] = 0.0
        cell.bt[0].values[...] = 50.0  # t ~ 1
        x = np.array([0.5, -0.25])
        s0 = np.array([0.1, 0.2, -0.3])
        out, _ = cell.step(ad.constant(x), ad.constant(s0))
        want = np.tanh(x @ cell.Wh.values + s0 @ cell.Rh[0].values
                       + cell.bh[0].values)
        assert np.allclose(out.values, want, atol=1e-9)

    def test_depth_must_be_positive(self):
        with pytest.raises(ValueError):
            RHNCell(ParameterStore(), "c", 2, 3, RngStream(0), depth=0)

    def test_gradients_depth_three(self):
        check_cell_gradients(self._factory(), in_dim=3, n_steps=3)

    def test_make_cell_dispatch(self):
        store = ParameterStore()
        assert isinstance(make_cell("lstm", store, "a", 2, 3, RngStream(0)),
                          LSTMCell)
        assert isinstance(make_cell("rhn", store, "b", 2, 3, RngStream(0)),
                          RHNCell)
        with pytest.raises(ValueError):
            make_cell("gru", store, "x", 2, 3, RngStream(0))


class TestAdam:
    def test_first_step_moves_by_lr(self):
        store = ParameterStore()
        p = store.create("w", np.array([1.0, 2.0, 3.0]))
        p.grad = np.ones(3)
        adam_step(store, lr=1e-3)
        # m_hat = v_hat = 1 after bias correction, so step ~ lr
        assert np.allclose(p.values, np.array([1.0, 2.0, 3.0]) - 1e-3,
                           atol=1e-8)

    def test_zero_gradients_leave_params(self):
        store = ParameterStore()
        p = store.create("w", np.array([1.0, -1.0]))
        p.grad = np.ones(2)
        adam_step(store, lr=1e-2)
        after_first = p.values.copy()
        m_before = store.m["w"].copy()
        p.grad = np.zeros(2)
        adam_step(store, lr=1e-2)
        # moments decay toward zero; parameters drift by < lr
        assert np.all(np.abs(store.m["w"]) < np.abs(m_before))
        assert np.all(np.abs(p.values - after_first) < 1e-2)

    def test_missing_gradient(self):
        store = ParameterStore()
        store.create("w", np.zeros(2))
        with pytest.raises(MissingGradient):
            adam_step(store)

    def test_scalar_descent_on_quadratic(self):
        store = ParameterStore()
        w = store.create("w", np.array([1.0]))
        for _ in range(100):
            w.grad = 2.0 * w.values.copy()
            adam_step(store, lr=1e-2)
        assert abs(w.values[0]) < 0.5


class TestRngAndCheckpoint:
    def test_rng_reproducible(self):
        a = RngStream(42)
        b = RngStream(42)
        assert np.array_equal(a.normal(10), b.normal(10))
        assert a.random() == b.random()

    def test_glorot_bounds(self):
        rng = RngStream(0)
        w = glorot(rng, (30, 20))
        a = np.sqrt(6.0 / 50)
        assert np.all(np.abs(w) <= a)

    def test_checkpoint_exact_roundtrip(self, tmp_path):
        store = ParameterStore()
        rng = RngStream(3)
        store.create("layer.W", rng.normal((4, 5)))
        store.create("layer.b", rng.normal(5))
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, store, seed=99, extras={"kind": "test"})
        params, seed, extras = load_checkpoint(path)
        assert seed == 99
        assert extras == {"kind": "test"}
        assert list(params) == ["layer.W", "layer.b"]
        for name in params:
            assert np.array_equal(params[name], store.params[name].values)
