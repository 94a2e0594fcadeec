"""Batched numpy kernels (NCHW) for the layers in ``architecture``.

Each ``*_forward`` returns the output plus whatever the matching
``*_backward`` needs; inference code simply ignores the cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, kernel, stride):
    # (B, C, Ho, Wo, k, k) strided view, no copy
    return sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    kernel = weight.shape[2]
    win = _windows(x, kernel, stride)
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, O)
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return np.ascontiguousarray(out), (x.shape, win)


def conv2d_backward(dout, weight, stride, padding, cache):
    padded_shape, win = cache
    kernel = weight.shape[2]
    ho, wo = dout.shape[2], dout.shape[3]
    dweight = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
    dbias = dout.sum(axis=(0, 2, 3))
    dcols = np.tensordot(dout, weight, axes=([1], [0]))  # (B, Ho, Wo, C, k, k)
    dxp = np.zeros(padded_shape, dtype=dout.dtype)
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp, dweight, dbias


def maxpool_forward(x, kernel=2, stride=2):
    win = _windows(x, kernel, stride)
    flat = win.reshape(win.shape[:4] + (kernel * kernel,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool_backward(dout, kernel, stride, cache):
    in_shape, arg = cache
    ho, wo = dout.shape[2], dout.shape[3]
    dx = np.zeros(in_shape, dtype=dout.dtype)
    for i in range(kernel):
        for j in range(kernel):
            hit = arg == i * kernel + j
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dout * hit
    return dx


def _bn_axes(x):
    return (0, 2, 3) if x.ndim == 4 else (0,)


def _bn_view(v, x):
    return v[None, :, None, None] if x.ndim == 4 else v[None, :]


def batchnorm_inference(x, gamma, beta, mean, var, eps=1e-5):
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    return x * _bn_view(scale, x) + _bn_view(shift, x)


def batchnorm_train_forward(x, gamma, beta, eps=1e-5):
    axes = _bn_axes(x)
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - _bn_view(mean, x)) * _bn_view(inv_std, x)
    out = xhat * _bn_view(gamma, x) + _bn_view(beta, x)
    return out, (xhat, inv_std, mean, var)


def batchnorm_backward(dout, gamma, cache):
    xhat, inv_std, _, _ = cache
    axes = _bn_axes(dout)
    m = dout.size // dout.shape[1]
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * _bn_view(gamma, dout)
    dx = (
        _bn_view(inv_std / m, dout)
        * (m * dxhat - _bn_view(dxhat.sum(axis=axes), dout) - xhat * _bn_view((dxhat * xhat).sum(axis=axes), dout))
    )
    return dx, dgamma, dbeta


def dense_forward(x, weight, bias):
    flat = x.reshape(x.shape[0], -1)
    return flat @ weight.T + bias, (x.shape, flat)


def dense_backward(dout, weight, cache):
    in_shape, flat = cache
    dweight = dout.T @ flat
    dbias = dout.sum(axis=0)
    dx = (dout @ weight).reshape(in_shape)
    return dx, dweight, dbias


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    n = logits.shape[0]
    loss = float(np.mean(logsumexp - shifted[np.arange(n), labels]))
    grad = np.exp(shifted - logsumexp[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
