import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grcnn.errors import ContractError, DimensionError
from grcnn.gradcheck import gradcheck, numerical_gradient
from grcnn.tensor import (Tensor, add, default_dtype, get_default_dtype, make_result, mul_elementwise, no_grad,
                          relu, sigmoid)


class TestTensorBasics:
    def test_non_float_input_takes_default_dtype(self):
        assert Tensor([1, 2]).dtype == np.float32

    def test_float_arrays_keep_their_dtype(self):
        assert Tensor(np.zeros(2)).dtype == np.float64

    def test_default_dtype_context(self):
        with default_dtype(np.float64):
            assert Tensor([1]).dtype == np.float64
        assert get_default_dtype() == np.float32

    def test_grad_matches_shape_and_dtype(self, rng):
        x = Tensor(rng.standard_normal((2, 3)).astype(np.float32), requires_grad=True)
        (x * x).sum().backward()
        assert x.grad.shape == x.shape
        assert x.grad.dtype == x.dtype

    def test_leaf_grad_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x * 3.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])

    def test_shared_subexpression(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * x
        (y + y).sum().backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_no_grad_builds_no_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(np.zeros(1))).data[0] == 0.5

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = sigmoid(Tensor(np.array([-1000.0, 1000.0]))).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, 1.0])

    def test_relu_values(self):
        np.testing.assert_array_equal(relu(Tensor(np.array([-1.0, 2.0]))).data, [0.0, 2.0])

    def test_channel_broadcast(self, rng):
        a = rng.standard_normal((2, 3, 4, 4))
        b = rng.standard_normal((2, 3, 1, 1))
        np.testing.assert_allclose(add(Tensor(a), Tensor(b)).data, a + b)

    def test_general_broadcast_rejected(self):
        with pytest.raises(DimensionError, match="axis"):
            add(Tensor(np.ones((2, 3, 4, 4))), Tensor(np.ones((1, 3, 4, 4))))

    def test_mul_elementwise_gradcheck(self, rng):
        other = Tensor(rng.standard_normal((2, 3, 4, 4)))
        for _ in range(3):
            point = rng.standard_normal((2, 3, 4, 4))
            assert gradcheck(lambda t: mul_elementwise(t, other).sum(), point) < 1e-4

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
    def test_sigmoid_in_open_unit_interval(self, x):
        out = sigmoid(Tensor(x)).data
        assert np.all(out > 0) and np.all(out < 1)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (2, 5), elements=st.floats(-3, 3)))
    def test_add_is_commutative(self, x):
        y = Tensor(np.arange(10.0).reshape(2, 5))
        np.testing.assert_array_equal(add(Tensor(x), y).data, add(y, Tensor(x)).data)


class TestGradcheck:
    def test_sum_of_squares_is_exact(self, rng):
        point = rng.standard_normal((3, 4))
        assert gradcheck(lambda t: (t * t).sum(), point) < 1e-8

    def test_planted_bug_is_detected(self, rng):
        def bad_square(t):
            # backward claims d(x^2)/dx = 3x
            return make_result(t.data ** 2, (t,), lambda g: (3.0 * t.data * g,))

        err = gradcheck(lambda t: bad_square(t).sum(), rng.uniform(0.5, 2.0, size=(4,)))
        assert err == pytest.approx(1 / 3, abs=1e-6)

    def test_non_scalar_output_rejected(self):
        with pytest.raises(ContractError):
            gradcheck(lambda t: t * 2.0, np.ones(3))

    def test_numerical_gradient_of_linear_map(self):
        w = np.array([1.0, -2.0, 3.0])
        g = numerical_gradient(lambda t: mul_elementwise(t, Tensor(w)).sum(), np.zeros(3))
        np.testing.assert_allclose(g, w, rtol=1e-8)
