"""Numpy implementations of the convolution and pooling kernels.

These are the fallback used when the compiled extension is unavailable, and
the reference the compiled kernels are tested against.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b):
    """Valid (no padding) stride-1 cross-correlation.

    x: (N, C, H, W), w: (O, C, K, K), b: (O,) -> (N, O, H-K+1, W-K+1)
    """
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = h - k + 1, wd - k + 1
    cols = sliding_window_view(x, (k, k), axis=(2, 3))  # N, C, Ho, Wo, K, K
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    y = cols @ w.reshape(o, c * k * k).T + b
    return np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(dy, x, w):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = h - k + 1, wd - k + 1
    dy2 = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    cols = sliding_window_view(x, (k, k), axis=(2, 3))
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    dw = (dy2.T @ cols).reshape(w.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(o, c * k * k)).reshape(n, ho, wo, c, k, k)
    dx = np.zeros_like(x)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx, dw, db


def maxpool2_forward(x):
    """2x2 max pool, stride 2, floor on odd sizes; ties go to the first
    element of the window in row-major order.

    Returns the pooled array and the winning in-window offset (0..3).
    """
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), arg.astype(np.int8)


def maxpool2_backward(dy, arg, in_shape):
    n, c, h, w = in_shape
    ho, wo = h // 2, w // 2
    dwin = np.zeros((n, c, ho, wo, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, arg.astype(np.intp)[..., None], dy[..., None], axis=-1)
    dx = np.zeros(in_shape, dtype=dy.dtype)
    dx[:, :, :2 * ho, :2 * wo] = (
        dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    )
    return dx
