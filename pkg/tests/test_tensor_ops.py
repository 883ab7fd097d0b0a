"""
Tests for the tensor operations and their gradients.
"""
import numpy as np
import pytest

from conftest import numeric_grad, relative_error
from mcnn_lesion.src.config import SgdConfig
from mcnn_lesion.src.exceptions import InputError, ShapeError
from mcnn_lesion.src.tensor_ops import (
    conv2d_backward,
    conv2d_forward,
    cross_entropy_loss,
    dense_backward,
    dense_forward,
    maxpool2_backward,
    maxpool2_forward,
    pad_same_backward,
    pad_same_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    softmax,
)

SEEDS = range(20)
TOLERANCE = 1e-3


def naive_conv(x, k, b):
    c_out, c_in, kh, kw = k.shape
    _, h, w = x.shape
    out = np.zeros((c_out, h - kh + 1, w - kw + 1))
    for o in range(c_out):
        for y in range(h - kh + 1):
            for xx in range(w - kw + 1):
                out[o, y, xx] = b[o] + np.sum(x[:, y:y + kh, xx:xx + kw] * k[o])
    return out


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def test_conv_matches_direct_sum():
    """The vectorized cross-correlation equals the defining sum."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 6, 5)).astype(np.float32)
    k = rng.standard_normal((3, 2, 3, 2)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    out = conv2d_forward(x, k, b)
    assert out.shape == (3, 4, 4)
    assert out.dtype == np.float32
    np.testing.assert_allclose(out, naive_conv(x, k, b), rtol=1e-5, atol=1e-5)


def test_conv_batched_equals_unbatched():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 2, 5, 5)).astype(np.float32)
    k = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
    b = np.zeros(4, dtype=np.float32)
    batched = conv2d_forward(x, k, b)
    for i in range(3):
        np.testing.assert_allclose(batched[i], conv2d_forward(x[i], k, b), rtol=1e-6, atol=1e-6)


def test_conv_channel_mismatch_names_dimension():
    x = np.zeros((2, 5, 5), dtype=np.float32)
    k = np.zeros((1, 3, 3, 3), dtype=np.float32)
    with pytest.raises(ShapeError) as exc_info:
        conv2d_forward(x, k, np.zeros(1, dtype=np.float32))
    assert exc_info.value.context["dimension"] == "input.channels"


def test_conv_kernel_larger_than_input():
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradients(seed):
    """Kernel, bias and input gradients agree with finite differences."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 6, 6))
    k = rng.standard_normal((3, 2, 3, 3)) * 0.3
    b = rng.standard_normal(3)
    upstream = rng.standard_normal((3, 4, 4))

    grads = conv2d_backward(x, k, upstream)
    kernel_grad, bias_grad = grads.param_grads

    def loss(x_, k_, b_):
        return float(np.sum(conv2d_forward(x_, k_, b_).astype(np.float64) * upstream))

    assert relative_error(grads.input_grad, numeric_grad(lambda v: loss(v, k, b), x)) < TOLERANCE
    assert relative_error(kernel_grad, numeric_grad(lambda v: loss(x, v, b), k)) < TOLERANCE
    assert relative_error(bias_grad, numeric_grad(lambda v: loss(x, k, v), b)) < TOLERANCE


def test_conv_backward_rejects_wrong_upstream():
    x = np.zeros((1, 5, 5), dtype=np.float32)
    k = np.zeros((2, 1, 3, 3), dtype=np.float32)
    with pytest.raises(ShapeError):
        conv2d_backward(x, k, np.zeros((2, 4, 4), dtype=np.float32))


def test_pad_same_round_trip():
    x = np.arange(2 * 4 * 4, dtype=np.float32).reshape(2, 4, 4)
    padded = pad_same_forward(x, 3)
    assert padded.shape == (2, 6, 6)
    assert padded[:, 0, :].sum() == 0
    np.testing.assert_array_equal(pad_same_backward(padded, 3), x)


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def test_relu_forward_backward():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 3.0], dtype=np.float32)
    np.testing.assert_array_equal(relu_forward(x), [0.0, 0.0, 0.0, 0.5, 3.0])
    upstream = np.full(5, 7.0, dtype=np.float32)
    np.testing.assert_array_equal(relu_backward(x, upstream), [0.0, 0.0, 0.0, 7.0, 7.0])


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradient(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
    upstream = rng.standard_normal((3, 4))
    analytic = relu_backward(x, upstream)
    numeric = numeric_grad(lambda v: float(np.sum(relu_forward(v) * upstream)), x)
    assert relative_error(analytic, numeric) < TOLERANCE


# ---------------------------------------------------------------------------
# Max pooling
# ---------------------------------------------------------------------------

def test_maxpool_values_and_indices():
    x = np.array([[[1, 2, 0, 0],
                   [3, 4, 0, 5],
                   [9, 0, 1, 1],
                   [0, 0, 1, 1]]], dtype=np.float32)
    out, idx = maxpool2_forward(x)
    np.testing.assert_array_equal(out, [[[4, 5], [9, 1]]])
    # flat positions inside the 4×4 plane; the all-ones window ties to its top-left cell
    np.testing.assert_array_equal(idx, [[[5, 7], [8, 10]]])


def test_maxpool_backward_routes_to_argmax():
    x = np.zeros((1, 2, 2), dtype=np.float32)
    _, idx = maxpool2_forward(x)
    grad = maxpool2_backward(idx, np.array([[[2.5]]], dtype=np.float32))
    np.testing.assert_array_equal(grad, [[[2.5, 0.0], [0.0, 0.0]]])


def test_maxpool_odd_size_rejected():
    with pytest.raises(ShapeError):
        maxpool2_forward(np.zeros((1, 3, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        maxpool2_forward(np.zeros((1, 4, 5), dtype=np.float32))


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool_gradient(seed):
    rng = np.random.default_rng(seed)
    # distinct values spaced 0.1 apart so no window changes its winner under ±h
    x = (rng.permutation(2 * 4 * 6) * 0.1).reshape(2, 4, 6)
    upstream = rng.standard_normal((2, 2, 3))
    _, idx = maxpool2_forward(x)
    analytic = maxpool2_backward(idx, upstream)
    numeric = numeric_grad(lambda v: float(np.sum(maxpool2_forward(v)[0] * upstream)), x)
    assert relative_error(analytic, numeric) < TOLERANCE


def test_maxpool_batched():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 2, 4, 4)).astype(np.float32)
    out, idx = maxpool2_forward(x)
    assert out.shape == (3, 2, 2, 2)
    single_out, single_idx = maxpool2_forward(x[1])
    np.testing.assert_array_equal(out[1], single_out)
    np.testing.assert_array_equal(idx[1], single_idx)


# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------

def test_dense_forward():
    W = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]], dtype=np.float32)
    b = np.array([0.5, 0.0, -1.0], dtype=np.float32)
    np.testing.assert_allclose(dense_forward(np.array([1.0, 2.0], dtype=np.float32), W, b),
                               [5.5, -2.0, 4.0])


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        dense_forward(np.zeros(3), np.zeros((2, 4)), np.zeros(2))
    with pytest.raises(ShapeError):
        dense_forward(np.zeros(4), np.zeros((2, 4)), np.zeros(3))


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(5)
    W = rng.standard_normal((3, 5))
    b = rng.standard_normal(3)
    upstream = rng.standard_normal(3)
    grads = dense_backward(x, W, upstream)
    w_grad, b_grad = grads.param_grads

    def loss(x_, W_, b_):
        return float(np.sum(dense_forward(x_, W_, b_).astype(np.float64) * upstream))

    assert relative_error(grads.input_grad, numeric_grad(lambda v: loss(v, W, b), x)) < TOLERANCE
    assert relative_error(w_grad, numeric_grad(lambda v: loss(x, v, b), W)) < TOLERANCE
    assert relative_error(b_grad, numeric_grad(lambda v: loss(x, W, v), b)) < TOLERANCE


# ---------------------------------------------------------------------------
# Softmax and cross-entropy
# ---------------------------------------------------------------------------

def test_softmax_uniform_and_normalized():
    np.testing.assert_allclose(softmax(np.zeros(7, dtype=np.float32)), np.full(7, 1 / 7), rtol=1e-6)
    rng = np.random.default_rng(2)
    rows = softmax(rng.standard_normal((10, 7)).astype(np.float32) * 5)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-6)


def test_softmax_large_logits_stay_finite():
    out = softmax(np.array([1000.0, 0.0, -1000.0], dtype=np.float32))
    assert np.all(np.isfinite(out))
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert abs(float(out.sum()) - 1.0) < 1e-6


def test_softmax_rejects_non_finite():
    with pytest.raises(InputError):
        softmax(np.array([0.0, np.nan], dtype=np.float32))
    with pytest.raises(InputError):
        softmax(np.array([0.0, np.inf], dtype=np.float32))


def test_cross_entropy_value():
    scores = np.array([0.7, 0.2, 0.1], dtype=np.float32)
    target = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    loss, grad = cross_entropy_loss(scores, target)
    assert loss == pytest.approx(-np.log(0.7), rel=1e-6)
    np.testing.assert_allclose(grad, [-0.3, 0.2, 0.1], atol=1e-6)


def test_cross_entropy_zero_score_is_finite():
    loss, _ = cross_entropy_loss(np.array([0.0, 1.0], dtype=np.float32),
                                 np.array([1.0, 0.0], dtype=np.float32))
    assert np.isfinite(loss)


@pytest.mark.parametrize("target", [
    [1.0, 1.0, 0.0],
    [0.0, 0.0, 0.0],
    [0.5, 0.5, 0.0],
])
def test_cross_entropy_rejects_malformed_one_hot(target):
    with pytest.raises(InputError):
        cross_entropy_loss(np.full(3, 1 / 3, dtype=np.float32), np.array(target, dtype=np.float32))


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_cross_entropy_logit_gradient(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(7)
    target = np.zeros(7)
    target[rng.integers(7)] = 1.0
    _, analytic = cross_entropy_loss(softmax(z), target)
    numeric = numeric_grad(lambda v: cross_entropy_loss(softmax(v), target)[0], z)
    assert relative_error(analytic, numeric) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
def test_batched_cross_entropy_gradient_is_mean(seed):
    rng = np.random.default_rng(100 + seed)
    z = rng.standard_normal((4, 7))
    target = np.eye(7)[rng.integers(7, size=4)]
    _, analytic = cross_entropy_loss(softmax(z), target)
    numeric = numeric_grad(lambda v: cross_entropy_loss(softmax(v), target)[0], z)
    assert relative_error(analytic, numeric) < TOLERANCE


# ---------------------------------------------------------------------------
# SGD
# ---------------------------------------------------------------------------

def test_sgd_step_momentum():
    cfg = SgdConfig(learning_rate=0.1, momentum=0.9)
    params = [np.ones((2, 2), dtype=np.float32)]
    grads = [np.full((2, 2), 0.5, dtype=np.float32)]
    velocity = [np.zeros((2, 2), dtype=np.float32)]
    params, velocity = sgd_step(params, grads, velocity, cfg)
    np.testing.assert_allclose(velocity[0], -0.05, rtol=1e-6)
    np.testing.assert_allclose(params[0], 0.95, rtol=1e-6)
    params, velocity = sgd_step(params, grads, velocity, cfg)
    np.testing.assert_allclose(velocity[0], -0.095, rtol=1e-6)
    np.testing.assert_allclose(params[0], 0.855, rtol=1e-6)


def test_sgd_zero_learning_rate_keeps_params():
    cfg = SgdConfig(learning_rate=0.0, momentum=0.9)
    p = np.arange(4, dtype=np.float32)
    new_params, new_velocity = sgd_step([p], [np.ones(4, dtype=np.float32)], [np.zeros(4, dtype=np.float32)], cfg)
    np.testing.assert_array_equal(new_params[0], p)
    np.testing.assert_array_equal(new_velocity[0], 0.0)


def test_sgd_does_not_mutate_inputs():
    cfg = SgdConfig()
    p = np.ones(3, dtype=np.float32)
    v = np.zeros(3, dtype=np.float32)
    sgd_step([p], [np.ones(3, dtype=np.float32)], [v], cfg)
    np.testing.assert_array_equal(p, 1.0)
    np.testing.assert_array_equal(v, 0.0)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_step([np.ones(3)], [np.ones(4)], [np.zeros(3)], SgdConfig())
    with pytest.raises(ShapeError):
        sgd_step([np.ones(3)], [], [np.zeros(3)], SgdConfig())
