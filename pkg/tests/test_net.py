import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dynpinn.net import (JetBatch, MlpParams, MlpShape, NonFiniteError, forward_jet,
                         init_params, loss_grad)
from oracles import fd_jet, fd_param_grad, random_params, rel_err

SHAPES = [MlpShape(2, (7, 5), 2), MlpShape(3, (6, 4), 4)]


class TestShapes:
    def test_param_count_1d(self):
        # layer-by-layer sum of l_k * l_{k-1} + l_k
        shape = MlpShape(2, (90, 60), 2)
        assert shape.n_params == 2 * 90 + 90 + 90 * 60 + 60 + 60 * 2 + 2 == 5852
        assert init_params(shape, 0).values.shape == (5852,)

    def test_param_count_2d(self):
        shape = MlpShape(3, (90, 60), 4)
        assert shape.n_params == 3 * 90 + 90 + 90 * 60 + 60 + 60 * 4 + 4 == 6064

    @pytest.mark.parametrize("bad", [dict(n_in=1, hidden=(3, 3), n_out=2),
                                     dict(n_in=2, hidden=(3,), n_out=2),
                                     dict(n_in=2, hidden=(3, 0), n_out=2),
                                     dict(n_in=2, hidden=(3, 3), n_out=3)])
    def test_invalid_shapes(self, bad):
        with pytest.raises(ValueError):
            MlpShape(**bad)

    def test_params_validated(self):
        shape = MlpShape(2, (3, 3), 2)
        with pytest.raises(ValueError):
            MlpParams(shape, np.zeros(5))
        v = np.zeros(shape.n_params)
        v[3] = np.nan
        with pytest.raises(NonFiniteError):
            MlpParams(shape, v)


class TestInit:
    def test_deterministic(self):
        shape = MlpShape(2, (90, 60), 2)
        a, b = init_params(shape, 0), init_params(shape, 0)
        assert a.values.tobytes() == b.values.tobytes()
        assert not np.array_equal(a.values, init_params(shape, 1).values)

    def test_glorot_range_and_zero_bias(self):
        shape = MlpShape(3, (90, 60), 4)
        for (W, b), (fo, fi) in zip(init_params(shape, 3).layers(), shape.layer_shapes):
            assert W.shape == (fo, fi)
            assert np.all(np.abs(W) <= np.sqrt(6.0 / (fi + fo)))
            assert np.all(b == 0)


class TestJets:
    def test_single_neuron_at_zero(self):
        # W1 = W2 = W3 = 1, zero biases: y = tanh(tanh(x)), so at x = 0
        # value 0, dy/dx = 1, d2y/dx2 = 0
        shape = MlpShape(2, (1, 1), 2)
        v = np.zeros(shape.n_params)
        v[0] = 1.0                      # W1
        v[3] = 1.0                      # W2 (after W1: 2, b1: 1)
        v[5] = 1.0                      # W3[0, 0]
        jet = forward_jet(MlpParams(shape, v), np.zeros((1, 2)))
        assert jet.value[0, 0] == 0.0
        assert jet.grad[0, 0, 0] == pytest.approx(1.0, abs=1e-15)
        assert jet.hess[0, 0, 0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_tanh_half(self):
        # hidden -> output through a near-linear layer: scale by s, unscale by 1/s
        s = 1e-4
        shape = MlpShape(2, (1, 1), 2)
        v = np.zeros(shape.n_params)
        v[0] = 1.0
        v[3] = s
        v[5] = 1.0 / s
        jet = forward_jet(MlpParams(shape, v), np.array([[0.5, 0.0]]))
        # value = tanh(s*tanh(0.5))/s = tanh(0.5) + O(s^2)
        assert jet.value[0, 0] == pytest.approx(0.46211715726, abs=1e-8)
        assert jet.grad[0, 0, 0] == pytest.approx(0.78644773296, abs=1e-8)

    @pytest.mark.parametrize("shape", SHAPES, ids=["1d", "2d"])
    def test_matches_finite_differences(self, shape):
        rng = np.random.default_rng(11)
        worst_g = worst_h = 0.0
        for _ in range(100):
            p = random_params(shape, rng)
            x = rng.uniform(-1, 1, (1, shape.n_in))
            jet = forward_jet(p, x)
            g, h = fd_jet(p, x)
            worst_g = max(worst_g, rel_err(jet.grad, g))
            worst_h = max(worst_h, rel_err(jet.hess, h))
        assert worst_g < 1e-6
        assert worst_h < 1e-6

    @pytest.mark.parametrize("shape", SHAPES, ids=["1d", "2d"])
    def test_hessian_symmetry(self, shape):
        rng = np.random.default_rng(2)
        jet = forward_jet(random_params(shape, rng, 2.0), rng.uniform(-3, 3, (500, shape.n_in)))
        assert np.max(np.abs(jet.hess - np.swapaxes(jet.hess, -1, -2))) < 1e-12

    @pytest.mark.parametrize("shape", SHAPES, ids=["1d", "2d"])
    def test_batch_equals_pointwise(self, shape):
        rng = np.random.default_rng(4)
        p = random_params(shape, rng)
        x = rng.uniform(-1, 1, (37, shape.n_in))
        batch = forward_jet(p, x)
        for m in range(len(x)):
            single = forward_jet(p, x[m:m + 1])
            assert np.array_equal(single.value[0], batch.value[m])
            assert np.array_equal(single.grad[0], batch.grad[m])
            assert np.array_equal(single.hess[0], batch.hess[m])

    def test_chunking_is_exact(self):
        shape = SHAPES[0]
        rng = np.random.default_rng(5)
        p = random_params(shape, rng)
        x = rng.uniform(-1, 1, (103, 2))
        a, b = forward_jet(p, x), forward_jet(p, x, chunk=10)
        assert np.array_equal(a.hess, b.hess)

    def test_orders(self):
        p = init_params(SHAPES[0], 0)
        x = np.zeros((3, 2))
        j0, j1, j2 = (forward_jet(p, x, order=k) for k in range(3))
        assert j0.grad is None and j0.hess is None
        assert j1.grad.shape == (3, 2, 2) and j1.hess is None
        assert j2.hess.shape == (3, 2, 2, 2)
        assert np.array_equal(j0.value, j2.value)
        with pytest.raises(ValueError):
            forward_jet(p, x, order=3)

    def test_rejects_bad_points(self):
        p = init_params(SHAPES[0], 0)
        with pytest.raises(ValueError):
            forward_jet(p, np.array([[0.0, np.nan]]))
        with pytest.raises(ValueError):
            forward_jet(p, np.zeros((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(-4, 4), st.floats(-4, 4))
    def test_hessian_symmetry_property(self, seed, x, t):
        rng = np.random.default_rng(seed)
        jet = forward_jet(random_params(SHAPES[0], rng, 1.5), np.array([[x, t]]))
        assert np.max(np.abs(jet.hess - np.swapaxes(jet.hess, -1, -2))) < 1e-12


class TestLossGrad:
    @pytest.mark.parametrize("shape", SHAPES, ids=["1d", "2d"])
    def test_sum_of_squares(self, shape):
        rng = np.random.default_rng(7)
        for _ in range(10):
            p = random_params(shape, rng)
            x = rng.uniform(-1, 1, (6, shape.n_in))
            val, g = loss_grad(p, lambda j: (j.value ** 2).sum(), x)
            ref = fd_param_grad(p, lambda q: float((forward_jet(q, x, 0).value ** 2).sum()))
            assert val == pytest.approx(float((forward_jet(p, x, 0).value ** 2).sum()), rel=1e-14)
            assert rel_err(g, ref) < 1e-5

    @pytest.mark.parametrize("shape", SHAPES, ids=["1d", "2d"])
    def test_hessian_consuming_scalar(self, shape):
        # third-order mixed derivatives (params x input x input)
        rng = np.random.default_rng(8)

        def scalar(j):
            h = j.hess
            return (h[:, 0, 0, 0] * h[:, -1, -1, 0] + torch.sin(j.grad[:, 1, -1])).sum()

        def scalar_np(q, x):
            j = forward_jet(q, x)
            h = j.hess
            return float((h[:, 0, 0, 0] * h[:, -1, -1, 0] + np.sin(j.grad[:, 1, -1])).sum())

        for _ in range(10):
            p = random_params(shape, rng)
            x = rng.uniform(-1, 1, (5, shape.n_in))
            _, g = loss_grad(p, scalar, x)
            ref = fd_param_grad(p, lambda q: scalar_np(q, x))
            assert rel_err(g, ref) < 1e-5

    def test_mapping_of_batches(self):
        rng = np.random.default_rng(9)
        p = random_params(SHAPES[0], rng)
        pts = {"a": rng.uniform(size=(4, 2)), "b": rng.uniform(size=(3, 2))}
        val, g = loss_grad(p, lambda js: js["a"].hess.sum() + js["b"].grad.sum(), pts,
                           order={"a": 2, "b": 1})
        ref = fd_param_grad(p, lambda q: forward_jet(q, pts["a"]).hess.sum()
                            + forward_jet(q, pts["b"], 1).grad.sum())
        assert rel_err(g, ref) < 1e-5

    def test_constant_scalar_gives_zero_gradient(self):
        p = init_params(SHAPES[0], 0)
        val, g = loss_grad(p, lambda j: 3.0, np.zeros((2, 2)))
        assert val == 3.0 and g.shape == p.values.shape and not g.any()
        val, g = loss_grad(p, lambda j: torch.tensor(2.0), np.zeros((2, 2)))
        assert val == 2.0 and not g.any()

    def test_single_layer_chain_rule(self):
        # y = W3 tanh(W2 tanh(w x + b)) with W2 = s, W3 = 1/s, s small: dy/dw ~ (1 - tanh^2(2w + b)) * 2
        s = 1e-5
        w, b = 0.3, -0.1
        shape = MlpShape(2, (1, 1), 2)
        v = np.zeros(shape.n_params)
        v[0], v[2], v[3], v[5] = w, b, s, 1.0 / s
        _, g = loss_grad(MlpParams(shape, v), lambda j: j.value[0, 0], np.array([[2.0, 0.0]]))
        assert g[0] == pytest.approx((1 - np.tanh(2 * w + b) ** 2) * 2, rel=1e-8)

    def test_non_finite_reported(self):
        p = init_params(SHAPES[0], 0)
        with pytest.raises(NonFiniteError) as exc:
            loss_grad(p, lambda j: j.value.sum() / 0.0 * 0.0, np.zeros((2, 2)))
        assert exc.value.term == "scalar"


def test_jetbatch_numpy_roundtrip():
    t = torch.ones(2, 2)
    j = JetBatch(t, t, None, None, 0).numpy()
    assert isinstance(j.value, np.ndarray) and len(j) == 2
