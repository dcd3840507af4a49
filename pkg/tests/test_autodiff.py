import math

import numpy as np
import pytest

from vfp.autodiff import (Adam, Mlp, Tensor, as_tensor, central_difference,
                          check_gradient, concat, grad, logsumexp, make_rng,
                          max_rel_error, parameter, softmax, spawn_rngs)
from vfp.errors import DimensionError, NumericError


def scalar_mlp_forward(weights, biases, x, activation="tanh"):
    """Independent straight-line oracle: nested python loops, no arrays."""
    h = list(x)
    for layer, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for row, bias in zip(w, b):
            acc = bias
            for wij, xj in zip(row, h):
                acc += wij * xj
            out.append(acc)
        if layer < len(weights) - 1:
            if activation == "tanh":
                out = [math.tanh(v) for v in out]
            else:
                out = [max(0.0, v) for v in out]
        h = out
    return h


class TestTensor:
    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            Tensor([1.0, float("nan")])
        with pytest.raises(NumericError):
            Tensor([float("inf")])

    def test_backward_requires_scalar(self):
        x = parameter([1.0, 2.0])
        with pytest.raises(ValueError):
            (x * x).backward()

    def test_constant_loss_zero_grads(self):
        x = parameter([1.0, 2.0])
        loss = (x * 0.0).sum() + 5.0
        loss.backward()
        np.testing.assert_array_equal(x.grad, np.zeros(2))

    def test_quadratic_grad(self):
        x = parameter([1.0, -2.0, 3.0])
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2.0 * x.value)

    def test_grad_accumulates_across_backwards(self):
        x = parameter([1.0])
        (x * x).sum().backward()
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [4.0])

    def test_broadcasting_grads_match_fd(self):
        rng = make_rng(3)
        a = parameter(rng.normal(size=(4, 3)))
        b = parameter(rng.normal(size=(3,)))

        def loss():
            return ((a + b) * (a * b).tanh()).sum()

        assert check_gradient(loss, [a, b]) < 1e-6

    def test_getitem_and_concat_grads(self):
        a = parameter([[1.0, 2.0], [3.0, 4.0]])
        b = parameter([[5.0], [6.0]])

        def loss():
            c = concat([a, b], axis=1)
            return (c[:, 1:] * c[:, 1:]).sum()

        assert check_gradient(loss, [a, b]) < 1e-6

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(make_rng(0).normal(size=(5, 4)))
        s = softmax(x, axis=1).value
        np.testing.assert_allclose(s.sum(axis=1), np.ones(5), atol=1e-12)

    def test_logsumexp_matches_numpy(self):
        x = make_rng(1).normal(size=(6, 3)) * 10
        from scipy.special import logsumexp as sp_lse
        np.testing.assert_allclose(logsumexp(Tensor(x), axis=1).value,
                                   sp_lse(x, axis=1))

    def test_matmul_shape_errors(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


class TestMlp:
    def test_zero_parameters_give_zero_output(self):
        mlp = Mlp(3, (4,), 2, make_rng(0))
        for p in mlp.parameters():
            p.value = np.zeros(p.shape)
        out = mlp(np.ones((5, 3)))
        np.testing.assert_array_equal(out.value, np.zeros((5, 2)))

    def test_single_linear_layer(self):
        mlp = Mlp(1, (), 1, make_rng(0))
        mlp.weights[0].value = np.array([[2.0]])
        mlp.biases[0].value = np.array([1.0])
        np.testing.assert_allclose(mlp(np.array([[3.0]])).value, [[7.0]])

    def test_forward_matches_scalar_oracle(self):
        # same seed-0 draws feed both paths; evaluation is independent
        rng = make_rng(0)
        mlp = Mlp(2, (4, 3), 2, rng, activation="tanh")
        x = [0.5, -0.5]
        expected = scalar_mlp_forward(
            [w.value.tolist() for w in mlp.weights],
            [b.value.tolist() for b in mlp.biases], x)
        got = mlp(np.array([x])).value[0]
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_forward_sum_grad_matches_fd(self):
        mlp = Mlp(3, (6, 5), 2, make_rng(2))
        x = make_rng(3).normal(size=(4, 3))
        err = check_gradient(lambda: mlp(x).sum(), mlp.parameters())
        assert err < 1e-4

    def test_input_dim_checked(self):
        mlp = Mlp(3, (4,), 2, make_rng(0))
        with pytest.raises(DimensionError):
            mlp(np.ones((2, 5)))

    def test_parameter_count(self):
        mlp = Mlp(3, (8, 4), 2, make_rng(0))
        assert mlp.n_params == (8 * 3 + 8) + (4 * 8 + 4) + (2 * 4 + 2)

    def test_relu_activation_available(self):
        mlp = Mlp(2, (4,), 1, make_rng(1), activation="relu")
        err = check_gradient(lambda: (mlp(np.ones((2, 2))) ** 2).sum(),
                             mlp.parameters())
        assert err < 1e-3  # kinks at zero can bite exact THRESHOLD crossings


class TestAdam:
    def test_zero_grads_leave_params(self):
        w = parameter([1.0, -2.0])
        opt = Adam([w], lr=0.1)
        w.grad = np.zeros(2)
        before = w.value.copy()
        opt.step()
        np.testing.assert_array_equal(w.value, before)

    def test_one_step_descends(self):
        w = parameter(np.array(1.0))
        opt = Adam([w], lr=0.1)
        (w * w).backward()
        opt.step()
        assert w.value < 1.0

    def test_converges_on_shifted_quadratic(self):
        w = parameter(np.array(0.0))
        opt = Adam([w], lr=0.1)
        for _ in range(200):
            opt.zero_grad()
            ((w - 3.0) ** 2).backward()
            opt.step()
        assert abs(w.value - 3.0) < 1e-2

    def test_nan_update_raises(self):
        w = parameter(np.array(1.0))
        opt = Adam([w], lr=0.1)
        w.grad = np.array(np.inf)
        with pytest.raises(NumericError):
            opt.step()


class TestRng:
    def test_same_seed_same_stream(self):
        a = make_rng(42).standard_normal(16)
        b = make_rng(42).standard_normal(16)
        np.testing.assert_array_equal(a, b)

    def test_spawned_streams_differ(self):
        streams = spawn_rngs(7, 3)
        draws = [r.standard_normal(4) for r in streams]
        assert not np.array_equal(draws[0], draws[1])
        again = [r.standard_normal(4) for r in spawn_rngs(7, 3)]
        np.testing.assert_array_equal(draws[0], again[0])


def test_central_difference_on_known_gradient():
    f = lambda x: float((x ** 3).sum())
    x = np.array([1.0, 2.0])
    np.testing.assert_allclose(central_difference(f, x), 3 * x ** 2,
                               rtol=1e-6)


def test_max_rel_error_floor():
    assert max_rel_error(np.array([0.0]), np.array([1e-9])) < 1e-5
    assert max_rel_error(np.array([1.0]), np.array([2.0])) == 0.5
