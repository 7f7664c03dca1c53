"""Differentiable kernels.

Each op computes its forward value with numpy, then hands a closure that maps
the output gradient to input gradients to :func:`make_result`, which records
it on the active tape. Convolutions are realized as cross-correlation over
strided window views (im2col without the explicit copy); the scatter-add
"col2im" step is shared by the transposed convolution and the input gradient
of the convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DomainError, ShapeError
from .tensor import Tensor, make_result


def _pair(a, b):
    """Coerce the non-tensor operand of a binary op to the tensor's dtype."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    return Tensor(np.asarray(a, dtype=b.dtype)), b


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _pair(a, b)
    return make_result(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _pair(a, b)
    return make_result(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b):
    a, b = _pair(a, b)
    return make_result(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a):
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def reshape(a, shape):
    return make_result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=0):
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result("concat", out, tensors, backward)


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return make_result("sum", np.asarray(out, dtype=a.dtype), (a,), backward)


def mean(a, axis=None):
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    out = a.data.mean(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full(a.shape, g / count, dtype=a.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).astype(a.dtype),)

    return make_result("mean", np.asarray(out, dtype=a.dtype), (a,), backward)


# ----------------------------------------------------------------- activations

def relu(x):
    keep = x.data > 0
    return make_result("relu", np.where(keep, x.data, 0).astype(x.dtype), (x,), lambda g: (g * keep,))


def leaky_relu(x, alpha=0.2):
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return make_result("leaky_relu", x.data * slope, (x,), lambda g: (g * slope,))


def sigmoid(x):
    # Split by sign so exp never overflows.
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_result("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def tanh(x):
    t = np.tanh(x.data)
    return make_result("tanh", t, (x,), lambda g: (g * (1 - t * t),))


def activation(x, kind, alpha=0.2):
    """Apply ``kind`` in {"relu", "leaky_relu", "sigmoid", "tanh"} elementwise."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise DomainError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------- affine

def affine(x, weight, bias=None):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"affine: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = (g @ weight.data.T, x.data.T @ g)
        if bias is not None:
            grads += (g.sum(axis=0),)
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("affine", out, inputs, backward)


# ---------------------------------------------------------------- convolutions

def _windows(xp, kh, kw, stride):
    """View of shape N x C x Ho x Wo x kh x kw over a padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _col2im(cols, out_h, out_w, stride):
    """Scatter-add N x Hi x Wi x C x kh x kw patches into an N x C x out_h x out_w map."""
    n, hi, wi, c, kh, kw = cols.shape
    out = np.zeros((n, c, out_h, out_w), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * hi:stride, j:j + stride * wi:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """Cross-correlate ``x`` (N x Cin x H x W) with ``kernel`` (Cout x Cin x Kh x Kw)."""
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    if bias is not None and bias.shape != (kernel.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise DomainError(f"conv2d: invalid stride {stride} / padding {padding}")
    n, _, h, w = x.shape
    _, _, kh, kw = kernel.shape
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = _windows(xp, kh, kw, stride)
    out = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        ho, wo = g.shape[2], g.shape[3]
        d_kernel = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, kernel.data, axes=([1], [0]))  # N Ho Wo Cin kh kw
        dxp = np.zeros(xp.shape, dtype=x.dtype)
        # Rows/cols beyond the last full window received no contribution.
        part = _col2im(cols, stride * (ho - 1) + kh, stride * (wo - 1) + kw, stride)
        dxp[:, :, :part.shape[2], :part.shape[3]] = part
        dx = dxp[:, :, p:p + h, p:p + w]
        grads = (dx, d_kernel)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result("conv2d", out, inputs, backward)


def conv2d_transpose(x, kernel, bias=None, stride=1, padding=0):
    """Transposed convolution; ``kernel`` is Cin x Cout x Kh x Kw.

    Equals the gradient of :func:`conv2d` with respect to its input, so the
    output extent is ``(H - 1) * stride - 2 * padding + Kh``.
    """
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"conv2d_transpose: input {x.shape} incompatible with kernel {kernel.shape}")
    if bias is not None and bias.shape != (kernel.shape[1],):
        raise ShapeError(f"conv2d_transpose: bias {bias.shape} does not match kernel {kernel.shape}")
    n, _, h, w = x.shape
    _, _, kh, kw = kernel.shape
    full_h = (h - 1) * stride + kh
    full_w = (w - 1) * stride + kw
    p = padding
    out_h, out_w = full_h - 2 * p, full_w - 2 * p
    if h < 1 or w < 1 or out_h <= 0 or out_w <= 0:
        raise ShapeError(f"conv2d_transpose: output extent {out_h}x{out_w} for input {x.shape}")
    cols = np.tensordot(x.data, kernel.data, axes=([1], [0]))  # N H W Cout kh kw
    full = _col2im(cols, full_h, full_w, stride)
    out = full[:, :, p:p + out_h, p:p + out_w]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p))) if p else g
        win = _windows(gfull, kh, kw, stride)  # N Cout H W kh kw
        dx = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        d_kernel = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        grads = (np.ascontiguousarray(dx), d_kernel)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result("conv2d_transpose", out, inputs, backward)


# ------------------------------------------------------------------ batch norm

@dataclass(frozen=True)
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, channels, dtype=np.float32):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm2d(x, gamma, beta, state, training=True, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over N, H, W.

    Returns ``(output, new_state)``. Training mode normalizes with the biased
    batch variance and blends the unbiased variance into the running
    estimate; eval mode normalizes with the running estimates.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm2d: input {x.shape} with gamma {gamma.shape} / beta {beta.shape}")
    n, c, h, w = x.shape
    count = n * h * w
    axes = (0, 2, 3)
    dtype = x.dtype
    if training:
        if count < 2:
            raise DomainError(f"batchnorm2d: need N*H*W >= 2 in train mode, got {count}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        new_state = BatchNormState(
            ((1 - momentum) * state.running_mean + momentum * mu).astype(state.running_mean.dtype),
            ((1 - momentum) * state.running_var + momentum * var * count / (count - 1)).astype(
                state.running_var.dtype),
        )
    else:
        mu = state.running_mean.astype(dtype)
        var = state.running_var.astype(dtype)
        new_state = state
    inv = (1.0 / np.sqrt(var + eps)).astype(dtype)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        d_gamma = (g * xhat).sum(axis=axes)
        d_beta = g.sum(axis=axes)
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            s1 = dxhat.sum(axis=axes)[None, :, None, None]
            s2 = (dxhat * xhat).sum(axis=axes)[None, :, None, None]
            dx = (inv[None, :, None, None] / count) * (count * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv[None, :, None, None]
        return dx.astype(dtype), d_gamma, d_beta

    return make_result("batchnorm2d", out.astype(dtype), (x, gamma, beta), backward), new_state


# ---------------------------------------------------------------------- losses

def bce_with_logits(logits, targets):
    """Mean binary cross-entropy, ``softplus(x) - t * x`` in its stable form."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=logits.dtype)
    t = np.broadcast_to(t, logits.shape).astype(logits.dtype)
    if np.any(t < 0) or np.any(t > 1):
        raise DomainError("bce_with_logits: targets must lie in [0, 1]")
    x = logits.data
    n = x.size
    loss = (np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean()

    def backward(g):
        e = np.exp(-np.abs(x))
        s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return ((g / n) * (s - t)).astype(logits.dtype),

    return make_result("bce_with_logits", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def log_softmax(logits):
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=1, keepdims=True)),

    return make_result("log_softmax", out, (logits,), backward)


def softmax(x):
    """Plain numpy softmax over the last axis (not differentiable)."""
    x = np.asarray(x)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: expected N x K logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"softmax_cross_entropy: {labels.shape[0]} labels for logits {logits.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise DomainError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = (logz - shifted[np.arange(n), labels]).mean()

    def backward(g):
        p = np.exp(shifted - logz[:, None])
        p[np.arange(n), labels] -= 1.0
        return ((g / n) * p).astype(logits.dtype),

    return make_result("softmax_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)
