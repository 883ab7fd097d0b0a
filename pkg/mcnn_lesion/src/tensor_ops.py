#!/usr/bin/env python3
"""
Dense tensor operations with hand-written backward passes.

This module implements the forward and backward passes of the layers the
micro-CNN is built from (valid cross-correlation, ReLU, 2×2 max pooling,
affine layer, softmax with cross-entropy) plus the SGD-with-momentum update.

Tensors are numpy float32 arrays. Every op accumulates in float64 and
returns float32, and every op is pure: it never mutates its arguments and
the same inputs always produce bitwise-identical outputs.

Image-shaped ops accept a single sample (C×H×W) or a batch (N×C×H×W);
vector ops accept a single vector (D) or a batch (N×D). Parameter gradients
of batched calls are summed over the batch.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import SgdConfig
from .exceptions import InputError, ShapeError

# Configure logging
logger = logging.getLogger("mcnn-lesion.tensor")

Tensor = np.ndarray

# Smallest normal float32; clamps the true-class score inside the log
_MIN_SCORE = float(np.finfo(np.float32).tiny)


@dataclass(frozen=True, eq=False)
class LayerGrads:
    """
    Gradients of one layer.

    Attributes:
        param_grads: One gradient per parameter, shaped like the parameter
        input_grad: Gradient with respect to the layer input
    """
    param_grads: Tuple[Tensor, ...]
    input_grad: Tensor


def _batched(x: Tensor, rank: int, name: str) -> Tuple[np.ndarray, bool]:
    """Return x with a leading batch axis and whether one was added."""
    if x.ndim == rank:
        return x[np.newaxis], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(
        f"{name} must have rank {rank} or {rank + 1}",
        dimension=f"{name}.rank", expected=rank, actual=x.ndim,
    )


def _check_dim(name: str, expected: int, actual: int) -> None:
    if expected != actual:
        raise ShapeError(
            f"Shape mismatch in {name}: expected {expected}, got {actual}",
            dimension=name, expected=expected, actual=actual,
        )


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def conv2d_forward(input: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """
    Valid-padding 2D cross-correlation.

    out[o, y, x] = bias[o] + Σ_{c,i,j} input[c, y+i, x+j] · kernels[o, c, i, j]

    Args:
        input: C_in×H×W (or N×C_in×H×W)
        kernels: C_out×C_in×kH×kW
        bias: C_out

    Returns:
        C_out×(H−kH+1)×(W−kW+1) (with the batch axis if given)

    Raises:
        ShapeError: If channel counts disagree or the kernel exceeds the input
    """
    x, squeeze = _batched(input, 3, "input")
    if kernels.ndim != 4:
        raise ShapeError("kernels must be C_out×C_in×kH×kW", dimension="kernels.rank",
                         expected=4, actual=kernels.ndim)
    c_out, c_in, kh, kw = kernels.shape
    _check_dim("input.channels", c_in, x.shape[1])
    _check_dim("bias.length", c_out, bias.shape[0] if bias.ndim == 1 else -1)
    if kh > x.shape[2]:
        raise ShapeError("Kernel height exceeds input height", dimension="kernel.height",
                         expected=f"<= {x.shape[2]}", actual=kh)
    if kw > x.shape[3]:
        raise ShapeError("Kernel width exceeds input width", dimension="kernel.width",
                         expected=f"<= {x.shape[3]}", actual=kw)

    windows = sliding_window_view(x.astype(np.float64), (kh, kw), axis=(2, 3))
    # windows: N×C×Ho×Wo×kH×kW -> N×Ho×Wo×C_out
    out = np.tensordot(windows, kernels.astype(np.float64), axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias.astype(np.float64)[None, :, None, None]
    out = out.astype(np.float32)
    return out[0] if squeeze else out


def conv2d_backward(input: Tensor, kernels: Tensor, upstream_grad: Tensor) -> LayerGrads:
    """
    Gradients of conv2d_forward.

    Args:
        input: The forward input
        kernels: The forward kernels
        upstream_grad: Gradient w.r.t. the forward output

    Returns:
        LayerGrads with (kernel grad, bias grad) and the input grad

    Raises:
        ShapeError: If upstream_grad does not match the forward output shape
    """
    x, squeeze = _batched(input, 3, "input")
    g, _ = _batched(upstream_grad, 3, "upstream_grad")
    c_out, c_in, kh, kw = kernels.shape
    _check_dim("input.channels", c_in, x.shape[1])
    expected = (x.shape[0], c_out, x.shape[2] - kh + 1, x.shape[3] - kw + 1)
    if g.shape != expected:
        raise ShapeError("upstream_grad does not match the conv output shape",
                         dimension="upstream_grad", expected=expected, actual=g.shape)

    g64 = g.astype(np.float64)
    windows = sliding_window_view(x.astype(np.float64), (kh, kw), axis=(2, 3))
    kernel_grad = np.tensordot(g64, windows, axes=([0, 2, 3], [0, 2, 3]))
    bias_grad = g64.sum(axis=(0, 2, 3))

    # full correlation of the upstream gradient with the flipped kernels
    padded = np.pad(g64, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    g_windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    flipped = kernels.astype(np.float64)[:, :, ::-1, ::-1]
    input_grad = np.tensordot(g_windows, flipped, axes=([1, 4, 5], [0, 2, 3]))
    input_grad = input_grad.transpose(0, 3, 1, 2).astype(np.float32)

    return LayerGrads(
        param_grads=(kernel_grad.astype(np.float32), bias_grad.astype(np.float32)),
        input_grad=input_grad[0] if squeeze else input_grad,
    )


def pad_same_forward(input: Tensor, kernel_size: int) -> Tensor:
    """Zero-pad the spatial axes by kernel_size // 2 on each side."""
    x, squeeze = _batched(input, 3, "input")
    p = kernel_size // 2
    out = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    return out[0] if squeeze else out


def pad_same_backward(upstream: Tensor, kernel_size: int) -> Tensor:
    """Gradient of pad_same_forward: crop the padding back off."""
    g, squeeze = _batched(upstream, 3, "upstream")
    p = kernel_size // 2
    out = g[:, :, p:g.shape[2] - p, p:g.shape[3] - p]
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu_forward(x: Tensor) -> Tensor:
    """max(x, 0) elementwise."""
    return np.maximum(x, 0).astype(np.float32)


def relu_backward(x: Tensor, upstream: Tensor) -> Tensor:
    """Upstream gradient where x > 0, zero elsewhere."""
    if x.shape != upstream.shape:
        raise ShapeError("upstream does not match relu input", dimension="upstream",
                         expected=x.shape, actual=upstream.shape)
    return np.where(x > 0, upstream, 0).astype(np.float32)


# ---------------------------------------------------------------------------
# 2×2 max pooling
# ---------------------------------------------------------------------------

def maxpool2_forward(input: Tensor) -> Tuple[Tensor, np.ndarray]:
    """
    2×2 max pooling with stride 2.

    Ties inside a window go to the lowest flat index.

    Args:
        input: C×H×W (or N×C×H×W) with H and W even

    Returns:
        (pooled C×H/2×W/2, argmax indices) where each index is the flat
        position of the winning cell inside its channel's H×W plane

    Raises:
        ShapeError: If H or W is odd
    """
    x, squeeze = _batched(input, 3, "input")
    n, c, h, w = x.shape
    if h % 2:
        raise ShapeError("Max pooling needs an even height", dimension="height",
                         expected="even", actual=h)
    if w % 2:
        raise ShapeError("Max pooling needs an even width", dimension="width",
                         expected="even", actual=w)
    ho, wo = h // 2, w // 2
    cells = x.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    # argmax returns the first maximum, i.e. the lowest row-major position
    winner = np.argmax(cells, axis=-1)
    out = np.take_along_axis(cells, winner[..., None], axis=-1)[..., 0].astype(np.float32)

    rows = 2 * np.arange(ho)[:, None] + winner // 2
    cols = 2 * np.arange(wo)[None, :] + winner % 2
    indices = (rows * w + cols).astype(np.int64)
    if squeeze:
        return out[0], indices[0]
    return out, indices


def maxpool2_backward(indices: np.ndarray, upstream: Tensor) -> Tensor:
    """
    Route the upstream gradient to the recorded argmax cells.

    Args:
        indices: Argmax indices from maxpool2_forward
        upstream: Gradient w.r.t. the pooled output

    Returns:
        Gradient w.r.t. the pooling input (zeros outside argmax cells)

    Raises:
        ShapeError: If indices and upstream disagree
    """
    if indices.shape != upstream.shape:
        raise ShapeError("upstream does not match pooling indices", dimension="upstream",
                         expected=indices.shape, actual=upstream.shape)
    idx, squeeze = _batched(indices, 3, "indices")
    g, _ = _batched(upstream, 3, "upstream")
    n, c, ho, wo = g.shape
    h, w = 2 * ho, 2 * wo
    grad = np.zeros((n, c, h * w), dtype=np.float32)
    # pooling windows do not overlap, so every target cell is written once
    np.put_along_axis(grad, idx.reshape(n, c, -1), g.reshape(n, c, -1), axis=-1)
    grad = grad.reshape(n, c, h, w)
    return grad[0] if squeeze else grad


# ---------------------------------------------------------------------------
# Affine layer
# ---------------------------------------------------------------------------

def dense_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """
    Affine map W·x + b.

    Args:
        x: D_in (or N×D_in)
        W: D_out×D_in
        b: D_out

    Returns:
        D_out (or N×D_out)

    Raises:
        ShapeError: If dimensions disagree
    """
    xb, squeeze = _batched(x, 1, "x")
    if W.ndim != 2:
        raise ShapeError("W must be D_out×D_in", dimension="W.rank", expected=2, actual=W.ndim)
    _check_dim("x.features", W.shape[1], xb.shape[1])
    _check_dim("b.length", W.shape[0], b.shape[0] if b.ndim == 1 else -1)
    out = (xb.astype(np.float64) @ W.astype(np.float64).T + b.astype(np.float64)).astype(np.float32)
    return out[0] if squeeze else out


def dense_backward(x: Tensor, W: Tensor, upstream: Tensor) -> LayerGrads:
    """
    Gradients of dense_forward.

    Args:
        x: The forward input
        W: The forward weights
        upstream: Gradient w.r.t. the forward output

    Returns:
        LayerGrads with (W grad, b grad) and the input grad
    """
    xb, squeeze = _batched(x, 1, "x")
    g, _ = _batched(upstream, 1, "upstream")
    _check_dim("x.features", W.shape[1], xb.shape[1])
    _check_dim("upstream.features", W.shape[0], g.shape[1])
    _check_dim("upstream.batch", xb.shape[0], g.shape[0])
    g64 = g.astype(np.float64)
    w_grad = g64.T @ xb.astype(np.float64)
    b_grad = g64.sum(axis=0)
    x_grad = (g64 @ W.astype(np.float64)).astype(np.float32)
    return LayerGrads(
        param_grads=(w_grad.astype(np.float32), b_grad.astype(np.float32)),
        input_grad=x_grad[0] if squeeze else x_grad,
    )


# ---------------------------------------------------------------------------
# Softmax and cross-entropy
# ---------------------------------------------------------------------------

def softmax(logits: Tensor) -> Tensor:
    """
    Numerically stable softmax exp(z − max z) / Σ exp(z − max z).

    Args:
        logits: K (or N×K), K ≥ 2

    Returns:
        Probabilities of the same shape, each row summing to 1

    Raises:
        InputError: If a logit is non-finite or K < 2
    """
    z, squeeze = _batched(logits, 1, "logits")
    if z.shape[1] < 2:
        raise InputError("softmax needs at least two classes", {"classes": z.shape[1]})
    z64 = z.astype(np.float64)
    if not np.all(np.isfinite(z64)):
        raise InputError("softmax received a non-finite logit")
    e = np.exp(z64 - z64.max(axis=1, keepdims=True))
    out = (e / e.sum(axis=1, keepdims=True)).astype(np.float32)
    return out[0] if squeeze else out


def _check_one_hot(one_hot: np.ndarray) -> None:
    rows = one_hot.reshape(-1, one_hot.shape[-1])
    is_binary = np.all((rows == 0.0) | (rows == 1.0))
    if not is_binary or not np.all(rows.sum(axis=1) == 1.0):
        raise InputError("one_hot must contain exactly one 1 per row and zeros elsewhere")


def cross_entropy_loss(scores: Tensor, one_hot: Tensor) -> Tuple[float, Tensor]:
    """
    Cross-entropy of softmax scores against one-hot targets.

    For a single row the loss is −ln(score of the true class); for a batch
    it is the mean over rows. The returned gradient is taken with respect
    to the logits that produced the scores (softmax folded in): scores −
    one_hot, divided by N for a batch.

    Args:
        scores: Softmax output, K (or N×K)
        one_hot: Targets of the same shape

    Returns:
        (loss as a Python float accumulated in float64, logit gradient)

    Raises:
        InputError: If one_hot is malformed
        ShapeError: If shapes disagree
    """
    if scores.shape != one_hot.shape:
        raise ShapeError("scores and one_hot differ in shape", dimension="one_hot",
                         expected=scores.shape, actual=one_hot.shape)
    _check_one_hot(one_hot)
    s, squeeze = _batched(scores, 1, "scores")
    y, _ = _batched(one_hot, 1, "one_hot")
    s64 = s.astype(np.float64)
    y64 = y.astype(np.float64)
    true_scores = np.maximum((s64 * y64).sum(axis=1), _MIN_SCORE)
    losses = -np.log(true_scores)
    n = s.shape[0]
    grad = ((s64 - y64) / (1 if squeeze else n)).astype(np.float32)
    return float(losses.mean()), grad[0] if squeeze else grad


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def sgd_step(
    params: Sequence[Tensor],
    grads: Sequence[Tensor],
    velocity: Sequence[Tensor],
    cfg: SgdConfig,
) -> Tuple[List[Tensor], List[Tensor]]:
    """
    One SGD-with-momentum update.

    v ← momentum·v − lr·g;  p ← p + v

    Args:
        params: Parameter tensors
        grads: Gradients, one per parameter
        velocity: Momentum buffers, one per parameter
        cfg: Learning rate and momentum

    Returns:
        (updated params, updated velocity) as new arrays

    Raises:
        ShapeError: If counts or shapes disagree
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise ShapeError("params, grads and velocity differ in count", dimension="count",
                         expected=len(params), actual=(len(grads), len(velocity)))
    lr = np.float32(cfg.learning_rate)
    momentum = np.float32(cfg.momentum)
    new_params: List[Tensor] = []
    new_velocity: List[Tensor] = []
    for i, (p, g, v) in enumerate(zip(params, grads, velocity)):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"Parameter {i} shape mismatch", dimension=f"param[{i}]",
                             expected=p.shape, actual=(g.shape, v.shape))
        v_next = (momentum * v - lr * g).astype(np.float32)
        new_velocity.append(v_next)
        new_params.append((p + v_next).astype(np.float32))
    return new_params, new_velocity
