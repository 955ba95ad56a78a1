"""Tensor engine: op semantics, backward correctness, Adam."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import stylestab.tensor as T
from stylestab.optim import Adam, adam_init, adam_step
from stylestab.tensor import GradientError, Tensor, finite_difference_check


def small_arrays(shape):
    return hnp.arrays(np.float64, shape,
                      elements=st.floats(-2.0, 2.0, allow_nan=False))


# ---- conv2d ---------------------------------------------------------------

def test_conv2d_identity_kernel():
    x = Tensor(np.random.default_rng(0).random((1, 4, 4)))
    w = Tensor(np.ones((1, 1, 1, 1)))
    b = Tensor(np.zeros(1))
    out = T.conv2d(x, w, b, stride=1, pad=0)
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_ones_kernel_counts_window():
    x = Tensor(np.ones((1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    b = Tensor(np.zeros(1))
    out = T.conv2d(x, w, b, stride=1, pad=1).data[0]
    assert out[1, 1] == 9.0
    assert out[0, 0] == 4.0
    assert out[0, 1] == 6.0


def test_conv2d_stride2_shape():
    x = Tensor(np.zeros((2, 8, 8)))
    w = Tensor(np.zeros((3, 2, 3, 3)))
    b = Tensor(np.zeros(3))
    assert T.conv2d(x, w, b, stride=2, pad=1).shape == (3, 4, 4)


def test_conv2d_channel_mismatch_raises():
    x = Tensor(np.zeros((2, 4, 4)))
    w = Tensor(np.zeros((3, 5, 3, 3)))
    with pytest.raises(ValueError):
        T.conv2d(x, w, Tensor(np.zeros(3)), 1, 1)


def conv2d_reference(x, w, b, stride, pad):
    """Direct nested-loop convolution, the independent oracle."""
    c_out, c_in, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h_out = (x.shape[1] + 2 * pad - k) // stride + 1
    w_out = (x.shape[2] + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for co in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k]
                out[co, i, j] = np.sum(patch * w[co]) + b[co]
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_nested_loop_reference(stride, pad, rng):
    x = rng.standard_normal((3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    want = conv2d_reference(x, w, b, stride, pad)
    np.testing.assert_allclose(got, want, atol=1e-12)


# ---- instance_norm --------------------------------------------------------

def test_instance_norm_constant_channel_is_zero():
    x = Tensor(np.full((1, 2, 2), 5.0))
    np.testing.assert_array_equal(T.instance_norm(x).data, np.zeros((1, 2, 2)))


def test_instance_norm_already_normalized():
    x = Tensor(np.array([[[-1.0, 1.0]]]))
    np.testing.assert_allclose(T.instance_norm(x, eps=1e-12).data,
                               [[[-1.0, 1.0]]], atol=1e-9)


def test_instance_norm_standardizes():
    x = Tensor(np.array([[[0.0, 2.0], [4.0, 6.0]]]))
    out = T.instance_norm(x, eps=1e-5).data
    assert abs(out.mean()) < 1e-4
    assert abs(out.var() - 1.0) < 1e-4


@given(small_arrays((2, 3, 3)))
def test_instance_norm_eps_guarded_moments(arr):
    out = T.instance_norm(Tensor(arr), eps=1e-5).data
    for c in range(arr.shape[0]):
        assert abs(out[c].mean()) < 1e-8
        var = arr[c].var()
        expected_var = var / (var + 1e-5)
        assert abs(out[c].var() - expected_var) < 1e-8


# ---- elementwise suite ----------------------------------------------------

def test_relu_values():
    out = T.relu(Tensor(np.array([-2.0, 3.0]))).data
    np.testing.assert_array_equal(out, [0.0, 3.0])


def test_upsample_nearest2x():
    x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    want = [[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]]
    np.testing.assert_array_equal(T.upsample_nearest2x(x).data, want)


def test_concat_channels_shape_rules():
    a = Tensor(np.zeros((2, 4, 4)))
    b = Tensor(np.zeros((3, 4, 4)))
    assert T.concat_channels(a, b).shape == (5, 4, 4)
    with pytest.raises(ValueError):
        T.concat_channels(a, Tensor(np.zeros((1, 2, 2))))


def test_nan_output_is_hard_error():
    with pytest.raises(FloatingPointError):
        T.scale(Tensor(np.array([1.0])), float("nan"))


# ---- backward -------------------------------------------------------------

def test_backward_sum_of_squares():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    T.sum_all(T.square(x)).backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_inactive_relu():
    x = Tensor(np.array([-1.0]), requires_grad=True)
    T.sum_all(T.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GradientError):
        T.square(x).backward()


def test_backward_twice_is_error():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = T.sum_all(T.square(x))
    loss.backward()
    with pytest.raises(GradientError):
        loss.backward()


def test_disconnected_leaf_has_no_grad_but_no_error():
    x = Tensor(np.ones(2), requires_grad=True)
    y = Tensor(np.ones(2), requires_grad=True)
    T.sum_all(x).backward()
    assert y.grad is None


def test_backward_visits_each_node_once():
    x = Tensor(np.random.default_rng(1).random(4), requires_grad=True)
    nodes = [x]
    y = x
    for _ in range(6):
        y = T.square(T.add(y, y))
        nodes.append(y)
    T.sum_all(y).backward()
    for n in nodes:
        assert n._visits == 1


def test_composite_loss_matches_finite_differences(rng):
    def fn(a, b):
        return T.sum_all(T.square(T.mul(T.sigmoid(a), T.relu(b)) + a))

    for _ in range(10):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        assert finite_difference_check(fn, [a, b], rng=rng) < 1e-4


@pytest.mark.parametrize("op", [
    lambda x: T.sum_all(T.square(T.conv2d(
        x, Tensor(np.random.default_rng(3).standard_normal((2, 2, 3, 3))),
        Tensor(np.zeros(2)), 1, 1))),
    lambda x: T.sum_all(T.mul(
        Tensor(np.random.default_rng(4).standard_normal((2, 4, 4))),
        T.instance_norm(x))),
    lambda x: T.sum_all(T.square(T.upsample_nearest2x(x))),
    lambda x: T.sum_all(T.sigmoid(x)),
    lambda x: T.sum_all(T.square(T.transpose(T.reshape(x, (2, 16))))),
])
def test_op_gradients_match_finite_differences(op, rng):
    for _ in range(10):
        x = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True)
        assert finite_difference_check(op, [x], rng=rng) < 1e-4


# ---- adam -----------------------------------------------------------------

def test_adam_zero_grad_leaves_params_unchanged():
    params = [np.array([1.0, -2.0])]
    state = adam_init(params)
    for _ in range(5):
        params, state = adam_step(params, [np.zeros(2)], state, lr=0.1)
    np.testing.assert_array_equal(params[0], [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    g = np.array([1.5, -4.0, 2.0])
    params, _ = adam_step([np.zeros(3)], [g], adam_init([np.zeros(3)]), lr=0.05)
    np.testing.assert_allclose(params[0], -0.05 * np.sign(g), atol=1e-9)


def test_adam_converges_on_quadratic():
    x = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        loss = T.sum_all(T.square(x - Tensor(np.array([3.0]))))
        loss.backward()
        opt.step()
    assert abs(x.data[0] - 3.0) < 1e-2


def test_adam_rejects_nonpositive_lr():
    with pytest.raises(ValueError):
        Adam([Tensor(np.zeros(1), requires_grad=True)], lr=0.0)
    with pytest.raises(ValueError):
        adam_step([np.zeros(1)], [np.zeros(1)], adam_init([np.zeros(1)]), lr=-1.0)
