import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpnet import ops
from fpnet.gradcheck import gradcheck
from fpnet.ops import BatchNormSpec, BatchNormState, Conv2dSpec, DwsConvSpec
from fpnet.reference import conv2d_naive, grouped_conv2d_naive, max_pool_naive
from fpnet.tensor import ShapeError, Tensor, backward


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# conv2d

def test_conv_sum_of_ones():
    out = ops.conv2d(T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_conv_identity_kernel(g):
    x = g.standard_normal((2, 1, 5, 6))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(ops.conv2d(T(x), T(k), padding=1).data, x)


def test_conv_matches_naive_oracle_on_random_shapes():
    g = np.random.default_rng(0)
    for _ in range(60):
        n, c, o = g.integers(1, 3), g.integers(1, 4), g.integers(1, 4)
        k = int(g.choice([1, 2, 3, 5]))
        s, p = int(g.integers(1, 3)), int(g.integers(0, 3))
        h, w = g.integers(k, 8, size=2)
        x = g.standard_normal((n, c, h, w))
        wt = g.standard_normal((o, c, k, k))
        b = g.standard_normal(o)
        got = ops.conv2d(T(x), T(wt), T(b), stride=s, padding=p).data
        np.testing.assert_allclose(got, conv2d_naive(x, wt, b, s, p), atol=1e-5, rtol=1e-5)


def test_conv_float32_matches_oracle(g):
    x = g.standard_normal((2, 3, 7, 7)).astype(np.float32)
    wt = g.standard_normal((4, 3, 3, 3)).astype(np.float32)
    got = ops.conv2d(Tensor(x), Tensor(wt), padding=1).data
    assert got.dtype == np.float32
    np.testing.assert_allclose(got, conv2d_naive(x, wt, padding=1), atol=1e-5)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.conv2d(T(np.ones((1, 2, 4, 4))), T(np.ones((1, 3, 3, 3))))


def test_conv_spec_weight_shape():
    assert Conv2dSpec(3, 16, 3).weight_shape == (16, 3, 3, 3)


# depthwise

def test_dws_identity_kernels(g):
    x = g.standard_normal((2, 3, 5, 5))
    k = np.zeros((3, 1, 3, 3))
    k[:, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(ops.dws_conv(T(x), T(k)).data, x)


def test_dws_channel_isolation(g):
    x = g.standard_normal((1, 2, 6, 6))
    k = np.zeros((2, 1, 3, 3))
    k[0] = 1.0
    out = ops.dws_conv(T(x), T(k)).data
    assert np.all(out[:, 1] == 0)
    assert np.any(out[:, 0] != 0)


def test_dws_matches_grouped_oracle_on_random_shapes():
    g = np.random.default_rng(1)
    for _ in range(50):
        n, c = g.integers(1, 3), g.integers(1, 5)
        k = int(g.choice([1, 3, 5]))
        h, w = g.integers(1, 8, size=2)
        x = g.standard_normal((n, c, h, w))
        wt = g.standard_normal((c, 1, k, k))
        want = grouped_conv2d_naive(x, wt, groups=c, padding=(k - 1) // 2)
        np.testing.assert_allclose(ops.dws_conv(T(x), T(wt)).data, want, atol=1e-5, rtol=1e-5)


def test_dws_even_kernel_needs_padding():
    with pytest.raises(ValueError):
        DwsConvSpec(4, 2)
    assert DwsConvSpec(4, 2, padding=1).pad == 1
    assert DwsConvSpec(4, 3).weight_shape == (4, 1, 3, 3)


def test_dws_weight_must_be_one_per_channel():
    with pytest.raises(ShapeError):
        ops.dws_conv(T(np.ones((1, 2, 4, 4))), T(np.ones((2, 2, 3, 3))))


# batch norm

def test_batch_norm_training_statistics(g):
    x = 3.0 + 2.5 * g.standard_normal((16, 4, 8, 8))
    out = ops.batch_norm(T(x), BatchNormState(4, np.float64), training=True).data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() <= 1e-4
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() <= 1e-3


def test_batch_norm_constant_channel_is_zero():
    x = np.full((4, 2, 3, 3), 7.0)
    out = ops.batch_norm(T(x), BatchNormState(2, np.float64), training=True).data
    assert np.all(np.isfinite(out))
    assert np.all(out == 0)


def test_batch_norm_identity_affine_equals_no_affine(g):
    x = g.standard_normal((4, 3, 5, 5))
    plain = ops.batch_norm(T(x), BatchNormState(3, np.float64), True).data
    aff = ops.batch_norm(T(x), BatchNormState(3, np.float64), True, T(np.ones(3)), T(np.zeros(3))).data
    np.testing.assert_array_equal(plain, aff)


def test_batch_norm_running_update(g):
    x = g.standard_normal((5, 2, 3, 3)) * 2 + 1
    st_ = BatchNormState(2, np.float64)
    ops.batch_norm(T(x), st_, True)
    mean = x.mean(axis=(0, 2, 3))
    var_unbiased = x.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(st_.running_mean.data, 0.1 * mean)
    np.testing.assert_allclose(st_.running_var.data, 0.9 + 0.1 * var_unbiased)


def test_batch_norm_eval_uses_running_stats(g):
    x = g.standard_normal((3, 2, 4, 4))
    st_ = BatchNormState(2, np.float64)
    st_.running_mean.data = np.array([1.0, -1.0])
    st_.running_var.data = np.array([4.0, 0.25])
    out = ops.batch_norm(T(x), st_, False).data
    want = (x - st_.running_mean.data[None, :, None, None]) / np.sqrt(st_.running_var.data + 1e-5)[None, :, None, None]
    np.testing.assert_allclose(out, want, rtol=1e-12)


def test_batch_norm_single_sample_training_rejected():
    with pytest.raises(ValueError):
        ops.batch_norm(T(np.ones((1, 2, 3, 3))), BatchNormState(2), True)


def test_batch_norm_spec_defaults():
    s = BatchNormSpec(8)
    assert (s.eps, s.momentum, s.affine) == (1e-5, 0.1, True)


# relu / pooling / linear

def test_relu_example():
    np.testing.assert_array_equal(ops.relu(T([-1.0, 0.0, 2.0])).data, [0, 0, 2])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
def test_relu_idempotent(vals):
    x = T(vals)
    np.testing.assert_array_equal(ops.relu(ops.relu(x)).data, ops.relu(x).data)


def test_max_pool_example():
    out = ops.max_pool2d(T([[[[1.0, 2.0], [3.0, 4.0]]]]), 2)
    assert out.data.item() == 4.0


def test_max_pool_ties_route_to_first_index():
    x = T(np.full((1, 1, 4, 4), 2.0), grad=True)
    out = ops.max_pool2d(x, 2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.0))
    backward(out.sum())
    want = np.zeros((4, 4))
    want[::2, ::2] = 1.0
    np.testing.assert_array_equal(x.grad[0, 0], want)


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 1), (3, 2)])
def test_max_pool_matches_oracle(g, window, stride):
    x = g.standard_normal((2, 3, 8, 8))
    np.testing.assert_array_equal(ops.max_pool2d(T(x), window, stride).data, max_pool_naive(x, window, stride))


def test_global_avg_pool():
    np.testing.assert_array_equal(ops.global_avg_pool(T(np.ones((1, 2, 4, 4)))).data, [[1, 1]])
    x = np.array([[[[3.5]], [[-2.0]]]])
    np.testing.assert_array_equal(ops.global_avg_pool(T(x)).data, [[3.5, -2.0]])


def test_global_avg_pool_vs_mean(g):
    x = g.standard_normal((3, 5, 4, 6))
    want = np.array([[x[n, c].sum() / 24 for c in range(5)] for n in range(3)])
    np.testing.assert_allclose(ops.global_avg_pool(T(x)).data, want, rtol=1e-12)


def test_linear_identity_and_bias(g):
    x = g.standard_normal((4, 3))
    np.testing.assert_array_equal(ops.linear(T(x), T(np.eye(3)), T(np.zeros(3))).data, x)
    b = np.array([1.0, -2.0])
    out = ops.linear(T(x), T(np.zeros((2, 3))), T(b)).data
    np.testing.assert_array_equal(out, np.tile(b, (4, 1)))


# loss

def test_cross_entropy_uniform_logits():
    loss = ops.softmax_cross_entropy(T(np.zeros((5, 10))), np.arange(5))
    assert loss.item() == pytest.approx(math.log(10), abs=1e-12)
    assert loss.item() == pytest.approx(2.302585, abs=1e-6)


def test_cross_entropy_saturated():
    logits = np.zeros((3, 10))
    labels = np.array([1, 4, 9])
    logits[np.arange(3), labels] = 1000.0
    assert ops.softmax_cross_entropy(T(logits), labels).item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_gradient_formula(g):
    logits = T(g.standard_normal((4, 10)), grad=True)
    labels = np.array([0, 3, 3, 9])
    backward(ops.softmax_cross_entropy(logits, labels))
    p = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
    p[np.arange(4), labels] -= 1
    np.testing.assert_allclose(logits.grad, p / 4, rtol=1e-10)


def test_cross_entropy_bad_label():
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(T(np.zeros((2, 10))), np.array([0, 10]))


def test_subsample_pad_shortcut(g):
    x = g.standard_normal((2, 4, 6, 6))
    out = ops.subsample_pad(T(x), 8, 2).data
    assert out.shape == (2, 8, 3, 3)
    np.testing.assert_array_equal(out[:, 2:6], x[:, :, ::2, ::2])
    assert np.all(out[:, :2] == 0) and np.all(out[:, 6:] == 0)


# finite-difference gradient checks

@pytest.mark.parametrize("name,fn,shapes", [
    ("conv s2 p1", lambda x, w, b: ops.conv2d(x, w, b, 2, 1), [(2, 3, 5, 5), (4, 3, 3, 3), (4,)]),
    ("conv 1x1", lambda x, w: ops.conv2d(x, w), [(2, 3, 4, 4), (2, 3, 1, 1)]),
    ("dws", ops.dws_conv, [(2, 3, 5, 5), (3, 1, 3, 3)]),
    ("bn", lambda x, w, b: ops.batch_norm(x, BatchNormState(3, np.float64), True, w, b),
     [(4, 3, 3, 3), (3,), (3,)]),
    ("relu", ops.relu, [(3, 7)]),
    ("pool", lambda x: ops.max_pool2d(x, 2), [(2, 2, 4, 4)]),
    ("gap", ops.global_avg_pool, [(2, 3, 3, 2)]),
    ("linear", ops.linear, [(4, 5), (3, 5), (3,)]),
    ("xent", lambda z: ops.softmax_cross_entropy(z, np.array([1, 0, 2])), [(3, 4)]),
    ("shortcut", lambda x: ops.subsample_pad(x, 6, 2), [(2, 3, 4, 4)]),
])
def test_gradcheck_float64(name, fn, shapes):
    g = np.random.default_rng(abs(hash(name)) % 2 ** 32)
    arrays = [g.standard_normal(s) for s in shapes]
    if name == "relu":
        arrays[0] += np.sign(arrays[0]) * 0.01  # keep clear of the kink
    assert gradcheck(fn, arrays, eps=1e-5) <= 1e-6


def test_gradcheck_float32_tolerance(g):
    x = g.standard_normal((2, 2, 5, 5)).astype(np.float32)
    w = g.standard_normal((3, 2, 3, 3)).astype(np.float32)
    assert gradcheck(lambda x, w: ops.conv2d(x, w, padding=1), [x, w], eps=1e-3) <= 1e-4
