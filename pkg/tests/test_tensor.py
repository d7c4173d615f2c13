import warnings

import numpy as np
import pytest

from fpnet.tensor import (
    Parameter, ShapeError, Tensor, backward, check_finite, child_seed, default_dtype,
    elementwise_mul, get_default_dtype, no_grad, tensor_create, tensor_sum,
)


def test_zero_fill():
    t = tensor_create((1, 1, 2, 2), "zeros")
    np.testing.assert_array_equal(t.data, np.zeros((1, 1, 2, 2)))


def test_constant_fill():
    t = tensor_create((2, 3, 1, 1), "constant", value=1.5)
    assert t.size == 6
    assert np.all(t.data == 1.5)


def test_uniform_fill_is_reproducible():
    a = tensor_create((1, 1, 4, 4), "uniform", lo=-1, hi=1, seed=7)
    b = tensor_create((1, 1, 4, 4), "uniform", lo=-1, hi=1, seed=7)
    assert a.data.tobytes() == b.data.tobytes()
    assert np.all((a.data >= -1) & (a.data < 1))


def test_random_fill_needs_seed():
    with pytest.raises(ValueError):
        tensor_create((2, 2), "normal")


@pytest.mark.parametrize("shape", [(0, 3), (2, -1)])
def test_non_positive_extent_rejected(shape):
    with pytest.raises(ShapeError):
        tensor_create(shape)


def test_unaddressable_shape_rejected():
    with pytest.raises(OverflowError):
        tensor_create((2 ** 31, 2 ** 31, 4))


def test_default_precision_switch():
    assert get_default_dtype() == np.float32
    with default_dtype(np.float64):
        assert tensor_create((2,)).dtype == np.float64
    assert tensor_create((2,)).dtype == np.float32


def test_square_gradient():
    w = Tensor([3.0], requires_grad=True, dtype=np.float64)
    backward(tensor_sum(elementwise_mul(w, w)))
    np.testing.assert_array_equal(w.grad, [6.0])


def test_bilinear_gradient(g):
    a = Tensor(g.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(g.standard_normal((3, 4)), requires_grad=True)
    backward((a * b).sum())
    np.testing.assert_array_equal(a.grad, b.data)
    np.testing.assert_array_equal(b.grad, a.data)


def test_gradients_accumulate():
    w = Tensor([1.0, -2.0], requires_grad=True, dtype=np.float64)
    loss = (w * w).sum()
    backward(loss)
    backward(loss)
    np.testing.assert_array_equal(w.grad, [4.0, -8.0])


def test_shared_subexpression_sums_paths():
    x = Tensor([2.0], requires_grad=True, dtype=np.float64)
    y = x * x
    backward((y + y).sum())
    np.testing.assert_array_equal(x.grad, [8.0])


def test_non_scalar_backward_rejected():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(w * w)


def test_disconnected_loss_warns():
    loss = Tensor(np.ones(1)).sum()
    with pytest.warns(RuntimeWarning):
        backward(loss)


def test_no_grad_records_nothing():
    w = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        out = (w * w).sum()
    assert not out.requires_grad
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        backward(out)
    assert w.grad is None


def test_elementwise_product_examples():
    a = Tensor([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(elementwise_mul(a, Tensor([4.0, 5.0, 6.0])).data, [4, 10, 18])
    np.testing.assert_array_equal(elementwise_mul(a, Tensor(np.zeros(3))).data, np.zeros(3))


def test_elementwise_product_shape_mismatch():
    with pytest.raises(ShapeError):
        elementwise_mul(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_check_finite_flags_overflow():
    big = Tensor(np.array([1e30], dtype=np.float32))
    with check_finite(), np.errstate(over="ignore"):
        with pytest.raises(FloatingPointError):
            big * big
    with np.errstate(over="ignore"):
        assert np.isinf((big * big).data[0])


def test_non_learnable_parameter_gets_no_grad():
    p = Parameter(np.ones(2), learnable=False)
    assert not p.requires_grad
    w = Parameter(np.ones(2))
    backward((w * p).sum())
    assert p.grad is None
    np.testing.assert_array_equal(w.grad, [1, 1])


def test_child_seed_distinct_streams():
    assert child_seed(3, 1, 2) == (3, 1, 2)
    a = tensor_create(8, "normal", seed=child_seed(0, 1))
    b = tensor_create(8, "normal", seed=child_seed(0, 2))
    assert not np.array_equal(a.data, b.data)
