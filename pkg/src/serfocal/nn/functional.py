"""Forward/backward kernels.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Arrays are NCHW.
"""

import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from serfocal.errors import DegenerateBatchWarning, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def _strided_slice(start, count, stride):
    return slice(start, start + stride * (count - 1) + 1, stride)


def conv2d_forward(x, w, b=None, stride=1, pad=0):
    """Cross-correlation with zero padding (no kernel flip)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    out_ch, in_ch, kh, kw = w.shape
    if in_ch != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {in_ch}")
    if stride < 1 or h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit {h}x{wd} with pad {pad}")
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C*kh*kw, Ho*Wo): the copy runs along the spatial axis
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    out = np.matmul(w.reshape(out_ch, -1), cols)
    if b is not None:
        out += b[:, None]
    return out.reshape(n, out_ch, ho, wo), (x.shape, cols, w, stride, pad, b is not None)


def conv2d_backward(dout, cache):
    """Returns ``(dx, dw, db)``; ``db`` is None for bias-free convs."""
    (n, c, h, wd), cols, w, stride, pad, has_bias = cache
    out_ch, _, kh, kw = w.shape
    ho, wo = dout.shape[2], dout.shape[3]
    dflat = dout.reshape(n, out_ch, ho * wo)
    dw = np.tensordot(dflat, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = dflat.sum(axis=(0, 2)) if has_bias else None
    dcols = np.matmul(w.reshape(out_ch, -1).T, dflat).reshape(n, c, kh, kw, ho, wo)
    if kh == kw == 1 and pad == 0:
        dx = np.zeros((n, c, h, wd), dtype=dout.dtype)
        dx[:, :, ::stride, ::stride][:, :, :ho, :wo] = dcols[:, :, 0, 0]
        return dx, dw, db
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        rows = _strided_slice(i, ho, stride)
        for j in range(kw):
            dxp[:, :, rows, _strided_slice(j, wo, stride)] += dcols[:, :, i, j]
    dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training,
                      eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel batch normalization over every axis but 1.

    In training mode ``running_mean``/``running_var`` are updated in place.
    """
    if x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm: {x.shape[1]} channels, params for {gamma.shape[0]}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.size // x.shape[1]
        if x.shape[0] == 1 and np.any(var == 0):
            warnings.warn("batch of size 1 with zero variance; variance clamped by eps",
                          DegenerateBatchWarning, stacklevel=3)
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out, (xhat, inv_std, gamma, axes, bshape, training)


def batchnorm_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, axes, bshape, training = cache
    dbeta = dout.sum(axis=axes)
    dgamma = (dout * xhat).sum(axis=axes)
    dxhat = dout * gamma.reshape(bshape)
    if not training:
        return dxhat * inv_std.reshape(bshape), dgamma, dbeta
    m = dout.size // dout.shape[1]
    dx = (inv_std.reshape(bshape) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(bshape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
    )
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x, kernel=3, stride=2, pad=1):
    n, c, h, w = x.shape
    if h + 2 * pad < kernel or w + 2 * pad < kernel:
        raise ShapeError(f"maxpool: kernel {kernel} does not fit {h}x{w}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx, kernel, stride, pad)


def maxpool_backward(dout, cache):
    (n, c, h, w), idx, kernel, stride, pad = cache
    ho, wo = idx.shape[2], idx.shape[3]
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for i in range(kernel):
        rows = _strided_slice(i, ho, stride)
        for j in range(kernel):
            dxp[:, :, rows, _strided_slice(j, wo, stride)] += dout * (idx == i * kernel + j)
    return dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp


def global_avg_pool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout, shape):
    n, c, h, w = shape
    return np.broadcast_to(dout[:, :, None, None] / (h * w), shape).copy()


def linear_forward(x, w, b):
    """``x @ w.T + b`` with ``w`` shaped (out, in)."""
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    return x @ w.T + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)
