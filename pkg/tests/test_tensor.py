import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import gradcases
from freezelab import tensor as T
from freezelab.errors import ConfigError, ShapeError, UsageError
from freezelab.tensor import Parameter, Tensor

finite = st.floats(-10, 10, allow_nan=False, width=64)


@pytest.mark.parametrize("case", gradcases.cases(len(gradcases.BUILDERS)), ids=lambda c: c.name)
def test_gradient_matches_central_difference(case):
    assert gradcases.check(case) < 1e-6


def naive_conv(x, w, stride, pad):
    """Direct loop cross-correlation; the independent oracle for conv2d."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, o, i, j] = np.sum(patch * w[o])
    return out


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 1, 4), (1, 2, 3), (3, 0, 2)])
def test_conv2d_matches_loop_oracle(stride, pad, k):
    rng = np.random.default_rng(stride * 10 + pad + k)
    x = rng.normal(size=(2, 3, 7, 7))
    w = rng.normal(size=(4, 3, k, k))
    np.testing.assert_allclose(T.conv2d(x, w, stride, pad).data, naive_conv(x, w, stride, pad),
                               rtol=1e-12, atol=1e-12)


def test_conv2d_is_correlation_not_convolution():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 0, 0] = 1.0
    w = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
    # top-left impulse under a centred kernel picks the bottom-right tap
    assert T.conv2d(x, w, 1, 1).data[0, 0, 1, 1] == 0.0
    assert T.conv2d(x, w, 1, 1).data[0, 0, 0, 0] == 4.0


def test_conv2d_rejects_empty_output_and_channel_mismatch():
    with pytest.raises(ConfigError):
        T.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        T.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


def test_scale_shift_norm_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 4, 5)) * 3 + 1
    g, b = rng.normal(size=3), rng.normal(size=3)
    mu = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    want = g[:, None, None] * (x - mu) / np.sqrt(var + 1e-5) + b[:, None, None]
    np.testing.assert_allclose(T.scale_shift_norm(x, g, b).data, want, rtol=1e-12, atol=1e-12)


def test_scale_shift_norm_is_batch_independent():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3, 4, 4))
    g, b = np.ones(3), np.zeros(3)
    whole = T.scale_shift_norm(x, g, b).data
    for i in range(4):
        np.testing.assert_array_equal(T.scale_shift_norm(x[i], g, b).data, whole[i])


def test_leaky_relu_at_zero_takes_negative_branch_slope():
    x = Tensor(np.zeros(3), requires_grad=True)
    T.backward(T.leaky_relu(x, 0.2).sum())
    np.testing.assert_array_equal(x.grad, [0.2, 0.2, 0.2])


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        T.backward(x * 2.0)


def test_backward_accumulates_across_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.backward((x * x).sum())
    T.backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])


def test_diamond_graph_visits_each_node_once():
    x = Tensor(np.array(3.0), requires_grad=True)
    h = x * x
    y = h + h * h  # dy/dx = 2x + 4x^3
    T.backward(y)
    assert x.grad == 2 * 3 + 4 * 27
    assert len(T.tape(y)) == 4


def test_frozen_parameter_gets_no_gradient():
    p = Parameter(np.ones(2), "w", "weight", trainable=False)
    q = Parameter(np.ones(2), "v", "weight")
    T.backward((p * q).sum())
    np.testing.assert_array_equal(p.grad, 0.0)
    np.testing.assert_array_equal(q.grad, 1.0)


def test_suspended_blocks_accumulation_but_passes_gradient_through():
    p = Parameter(np.array([2.0]), "w", "weight")
    x = Tensor(np.array([3.0]), requires_grad=True)
    with T.suspended([p]):
        y = (p * x).sum()
    assert p.trainable
    T.backward(y)
    np.testing.assert_array_equal(p.grad, 0.0)
    np.testing.assert_array_equal(x.grad, [2.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad
    T.backward(y)
    assert x.grad is None


def test_take_rows_range_and_matmul_shape_errors():
    with pytest.raises(UsageError):
        T.take_rows(np.zeros((3, 2)), [3])
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_broadcast_add_gradient_sums_over_broadcast_axis(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    T.backward((ta + tb).sum())
    np.testing.assert_array_equal(ta.grad, np.ones((3, 4)))
    np.testing.assert_array_equal(tb.grad, np.full(4, 3.0))


@given(arrays(np.float64, (5,), elements=finite))
def test_softplus_is_stable_and_positive(x):
    y = T.softplus(x * 100).data
    assert np.all(np.isfinite(y)) and np.all(y >= 0)
    np.testing.assert_allclose(y - T.softplus(-x * 100).data, x * 100, atol=1e-9)


@given(arrays(np.float64, (2, 2, 3, 3), elements=finite))
def test_upsample_backward_sums_each_2x2_cell(x):
    t = Tensor(x, requires_grad=True)
    up = T.upsample2x(t)
    assert up.shape == (2, 2, 6, 6)
    T.backward(up.sum())
    np.testing.assert_array_equal(t.grad, np.full(x.shape, 4.0))
