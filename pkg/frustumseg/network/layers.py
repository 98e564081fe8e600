"""Forward/backward pairs for the layer types of the 3D network.

Feature maps are (C, D, A, E) arrays (batch size one). Each ``*_forward`` returns
``(out, cache)`` and the matching ``*_backward`` takes ``(dout, cache)``.
Computation follows the dtype of the inputs, so gradient checks run in f64.
"""
from math import gcd
from typing import List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Shape3 = Tuple[int, int, int]


def conv_output_shape(shape: Sequence[int], kernel: int, stride: int, pad: int) -> Shape3:
    return tuple((n + 2 * pad - kernel) // stride + 1 for n in shape)


def _windows(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    if pad:
        x = np.pad(x, ((0, 0),) + ((pad, pad),) * 3)
    win = sliding_window_view(x, (kernel,) * 3, axis=(1, 2, 3))
    return win[:, ::stride, ::stride, ::stride]


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, pad: int = 1):
    """Cubic-kernel convolution (cross-correlation), zero padding."""
    kernel = w.shape[-1]
    win = _windows(x, kernel, stride, pad)
    out = np.tensordot(w, win, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    out += b[:, None, None, None]
    return out, (x.shape, win, w, stride, pad)


def conv3d_backward(dout: np.ndarray, cache):
    x_shape, win, w, stride, pad = cache
    kernel = w.shape[-1]
    db = dout.sum(axis=(1, 2, 3))
    dw = np.tensordot(dout, win, axes=([1, 2, 3], [1, 2, 3]))
    padded = tuple(n + 2 * pad for n in x_shape[1:])
    dxp = np.zeros((x_shape[0],) + padded, dtype=dout.dtype)
    od, oa, oe = dout.shape[1:]
    for i in range(kernel):
        for j in range(kernel):
            for k in range(kernel):
                contrib = np.tensordot(w[:, :, i, j, k], dout, axes=([0], [0]))
                dxp[
                    :,
                    i : i + stride * od : stride,
                    j : j + stride * oa : stride,
                    k : k + stride * oe : stride,
                ] += contrib
    if pad:
        dxp = dxp[:, pad:-pad, pad:-pad, pad:-pad]
    return dxp, dw, db


def effective_groups(channels: int, groups: int) -> int:
    return gcd(channels, groups)


def group_norm_forward(x, gamma, beta, groups: int = 4, eps: float = 1e-5):
    c = x.shape[0]
    g = effective_groups(c, groups)
    xg = x.reshape(g, -1)
    mean = xg.mean(axis=1, keepdims=True)
    var = xg.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv_std).reshape(x.shape)
    out = gamma[:, None, None, None] * xhat + beta[:, None, None, None]
    return out, (xhat, inv_std, gamma, g)


def group_norm_backward(dout, cache):
    xhat, inv_std, gamma, g = cache
    dgamma = (dout * xhat).sum(axis=(1, 2, 3))
    dbeta = dout.sum(axis=(1, 2, 3))
    dxhat = (dout * gamma[:, None, None, None]).reshape(g, -1)
    xh = xhat.reshape(g, -1)
    n = xh.shape[1]
    dx = (inv_std / n) * (
        n * dxhat - dxhat.sum(axis=1, keepdims=True) - xh * (dxhat * xh).sum(axis=1, keepdims=True)
    )
    return dx.reshape(xhat.shape), dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, cache):
    return dout * cache


def maxpool3d_forward(x, size: int = 2):
    """Non-overlapping max pooling; partial windows at the far edge are kept."""
    c = x.shape[0]
    out_shape = tuple(-(-n // size) for n in x.shape[1:])
    pad = [(0, 0)] + [(0, o * size - n) for o, n in zip(out_shape, x.shape[1:])]
    xp = np.pad(x, pad, constant_values=-np.inf)
    blocks = xp.reshape(c, out_shape[0], size, out_shape[1], size, out_shape[2], size)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4, 6).reshape(c, *out_shape, size**3)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, size)


def maxpool3d_backward(dout, cache):
    x_shape, arg, size = cache
    c = x_shape[0]
    out_shape = dout.shape[1:]
    blocks = np.zeros(dout.shape + (size**3,), dtype=dout.dtype)
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(c, *out_shape, size, size, size).transpose(0, 1, 4, 2, 5, 3, 6)
    dxp = blocks.reshape(c, *(o * size for o in out_shape))
    return dxp[:, : x_shape[1], : x_shape[2], : x_shape[3]]


def gap_forward(x, region: Tuple[slice, slice, slice]):
    """Global average pooling over a region of the feature map."""
    crop = x[(slice(None),) + tuple(region)]
    return crop.mean(axis=(1, 2, 3)), (x.shape, tuple(region), crop[0].size)


def gap_backward(dout, cache):
    x_shape, region, count = cache
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[(slice(None),) + region] = dout[:, None, None, None] / count
    return dx


def linear_forward(x, w, b):
    return w @ x + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return w.T @ dout, np.outer(dout, x), dout


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_forward(x):
    out = sigmoid(x)
    return out, out


def sigmoid_backward(dout, cache):
    return dout * cache * (1.0 - cache)


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Linear interpolation weights (n_out, n_in), half-pixel centers, edges clamped."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def _apply_axes(x, mats: List[np.ndarray]):
    for axis, m in enumerate(mats, start=1):
        x = np.moveaxis(np.tensordot(m, x, axes=([1], [axis])), 0, axis)
    return x


def upsample_forward(x, out_shape: Sequence[int]):
    """Separable trilinear resize of a (C, D, A, E) map to ``out_shape``."""
    out_shape = tuple(int(n) for n in out_shape)
    if tuple(x.shape[1:]) == out_shape:
        return x, None
    mats = [interpolation_matrix(n, o, x.dtype) for n, o in zip(x.shape[1:], out_shape)]
    return _apply_axes(x, mats), mats


def upsample_backward(dout, cache):
    if cache is None:
        return dout
    return _apply_axes(dout, [m.T for m in cache])


def concat_forward(xs: Sequence[np.ndarray]):
    return np.concatenate(xs, axis=0), [x.shape[0] for x in xs]


def concat_backward(dout, cache) -> List[np.ndarray]:
    return np.split(dout, np.cumsum(cache)[:-1], axis=0)


def crop_forward(x, region: Tuple[slice, slice, slice]):
    return x[(slice(None),) + tuple(region)], (x.shape, tuple(region))


def crop_backward(dout, cache):
    x_shape, region = cache
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[(slice(None),) + region] = dout
    return dx
