"""Layers with hand-written reverse-mode gradients.

Every layer is a pair of functions ``*_forward(...) -> (out, cache)`` and
``*_backward(dout, cache, ...) -> grads``. The module classes at the bottom
wrap them behind one uniform interface used by the gradient checker and the
networks::

    out, cache = module.forward(params, *inputs)
    dinputs, dparams = module.backward(params, dout, cache)

All arithmetic is float64.
"""
from typing import NamedTuple

import numpy as np

from . import kernels


class ReluCache(NamedTuple):
    x: np.ndarray


class PoolCache(NamedTuple):
    x: np.ndarray
    arg: np.ndarray


class Kink(NamedTuple):
    """Distance of some non-smooth decision (argmax, min) from its switch point."""
    margin: float


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# -- dense -------------------------------------------------------------------

def dense_forward(x, W, b):
    return x @ W + b, x


def dense_backward(dy, x, W):
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# -- relu --------------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0.0), ReluCache(x)


def relu_backward(dy, cache):
    return dy * (cache.x > 0)


# -- conv / pool -------------------------------------------------------------

def conv_forward(x, W, b):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return kernels.conv2d_forward(x, np.ascontiguousarray(W), np.ascontiguousarray(b)), x


def conv_backward(dy, x, W):
    return kernels.conv2d_backward(np.ascontiguousarray(dy), x, np.ascontiguousarray(W))


def pool_forward(x):
    x = np.ascontiguousarray(x)
    y, arg = kernels.maxpool2_forward(x)
    return y, PoolCache(x, arg)


def pool_backward(dy, cache):
    return kernels.maxpool2_backward(np.ascontiguousarray(dy), cache.arg, cache.x.shape)


def conv_out_shape(channels, height, width, out_channels=10, kernel=3):
    """Feature shape after conv(kernel, no padding) and 2x2 pooling."""
    ho, wo = height - kernel + 1, width - kernel + 1
    if ho < 2 or wo < 2:
        raise ValueError(f"grid {height}x{width} too small for conv{kernel} + pool2")
    return out_channels, ho // 2, wo // 2


def conv_block_forward(x, params, prefix=""):
    """conv3x3 (no padding) -> ReLU -> maxpool 2 -> flatten.

    ``x`` is (N, C, H, W); returns (N, out_channels * H' * W') and a cache.
    """
    W, b = params[prefix + "W"], params[prefix + "b"]
    if x.ndim != 4 or x.shape[1] != W.shape[1]:
        raise ValueError(f"conv block expects (N, {W.shape[1]}, H, W) input, got {x.shape}")
    c, cc = conv_forward(x, W, b)
    r, rc = relu_forward(c)
    p, pc = pool_forward(r)
    return p.reshape(p.shape[0], -1), (cc, rc, pc, p.shape)


def conv_block_backward(dout, cache, params, prefix=""):
    cc, rc, pc, pshape = cache
    dp = dout.reshape(pshape)
    dr = pool_backward(dp, pc)
    dc = relu_backward(dr, rc)
    dx, dW, db = conv_backward(dc, cc, params[prefix + "W"])
    return dx, {prefix + "W": dW, prefix + "b": db}


# -- GRU ---------------------------------------------------------------------

def gru_forward(x, h, params, prefix=""):
    """One GRU step (gate order r, z, n)::

        r = s(x Wir + bir + h Whr + bhr)
        z = s(x Wiz + biz + h Whz + bhz)
        n = tanh(x Win + bin + r * (h Whn + bhn))
        h' = (1 - z) * n + z * h
    """
    W_ih, W_hh = params[prefix + "W_ih"], params[prefix + "W_hh"]
    b_ih, b_hh = params[prefix + "b_ih"], params[prefix + "b_hh"]
    H = W_hh.shape[0]
    gi = x @ W_ih + b_ih
    gh = h @ W_hh + b_hh
    r = sigmoid(gi[:, :H] + gh[:, :H])
    z = sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
    ghn = gh[:, 2 * H:]
    n = np.tanh(gi[:, 2 * H:] + r * ghn)
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, r, z, n, ghn)


def gru_backward(dh_new, cache, params, prefix=""):
    x, h, r, z, n, ghn = cache
    W_ih, W_hh = params[prefix + "W_ih"], params[prefix + "W_hh"]
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dn_pre = dn * (1.0 - n * n)
    dr = dn_pre * ghn
    dr_pre = dr * r * (1.0 - r)
    dz_pre = dz * z * (1.0 - z)
    dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
    dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
    dx = dgi @ W_ih.T
    dh = dh + dgh @ W_hh.T
    grads = {
        prefix + "W_ih": x.T @ dgi,
        prefix + "W_hh": h.T @ dgh,
        prefix + "b_ih": dgi.sum(axis=0),
        prefix + "b_hh": dgh.sum(axis=0),
    }
    return dx, dh, grads


# -- init --------------------------------------------------------------------

def uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# -- modules -----------------------------------------------------------------

class Module:
    """Uniform wrapper: parameter shapes with fan-in, forward and backward."""

    def shapes(self):
        raise NotImplementedError

    def init(self, rng=None, zero=False, prefix=""):
        out = {}
        for name, (shape, fan_in) in self.shapes().items():
            if zero:
                out[prefix + name] = np.zeros(shape)
            else:
                out[prefix + name] = uniform_fan_in(rng, shape, fan_in)
        return out


class Dense(Module):
    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out

    def shapes(self):
        return {"W": ((self.n_in, self.n_out), self.n_in), "b": ((self.n_out,), self.n_in)}

    def forward(self, params, x):
        return dense_forward(x, params["W"], params["b"])

    def backward(self, params, dy, cache):
        dx, dW, db = dense_backward(dy, cache, params["W"])
        return (dx,), {"W": dW, "b": db}


class ReLU(Module):
    def shapes(self):
        return {}

    def forward(self, params, x):
        return relu_forward(x)

    def backward(self, params, dy, cache):
        return (relu_backward(dy, cache),), {}


class MaxPool2(Module):
    def shapes(self):
        return {}

    def forward(self, params, x):
        return pool_forward(x)

    def backward(self, params, dy, cache):
        return (pool_backward(dy, cache),), {}


class Conv2d(Module):
    def __init__(self, in_channels, out_channels=10, kernel=3):
        self.c, self.o, self.k = in_channels, out_channels, kernel

    def shapes(self):
        fan_in = self.c * self.k * self.k
        return {"W": ((self.o, self.c, self.k, self.k), fan_in), "b": ((self.o,), fan_in)}

    def forward(self, params, x):
        return conv_forward(x, params["W"], params["b"])

    def backward(self, params, dy, cache):
        dx, dW, db = conv_backward(dy, cache, params["W"])
        return (dx,), {"W": dW, "b": db}


class ConvBlock(Conv2d):
    """conv -> ReLU -> pool -> flatten, the feature extractor of both CNNs."""

    def forward(self, params, x):
        return conv_block_forward(x, params)

    def backward(self, params, dy, cache):
        dx, grads = conv_block_backward(dy, cache, params)
        return (dx,), grads


class GRUCell(Module):
    def __init__(self, n_in, hidden=128):
        self.n_in, self.hidden = n_in, hidden

    def shapes(self):
        H = self.hidden
        return {
            "W_ih": ((self.n_in, 3 * H), self.n_in),
            "W_hh": ((H, 3 * H), H),
            "b_ih": ((3 * H,), self.n_in),
            "b_hh": ((3 * H,), H),
        }

    def forward(self, params, x, h):
        return gru_forward(x, h, params)

    def backward(self, params, dy, cache):
        dx, dh, grads = gru_backward(dy, cache, params)
        return (dx, dh), grads


def gru_step(x, h, params, prefix=""):
    """Checked single GRU step returning only the new hidden state."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h))):
        raise ValueError("gru_step: non-finite input or hidden state")
    squeeze = x.ndim == 1
    if squeeze:
        x, h = x[None, :], h[None, :]
    H = params[prefix + "W_hh"].shape[0]
    if h.shape[1] != H:
        raise ValueError(f"hidden state has length {h.shape[1]}, expected {H}")
    h_new, _ = gru_forward(x, h, params, prefix)
    return h_new[0] if squeeze else h_new


def kink_margin(cache):
    """Smallest distance of any non-smooth point recorded in a cache tree.

    ReLU inputs contribute ``min |x|``; pooling windows contribute the gap
    between the winner and the runner-up; ``Kink`` records contribute their
    margin. Finite differences are only trustworthy when this exceeds the
    step size by a comfortable factor.
    """
    best = np.inf
    stack = [cache]
    while stack:
        item = stack.pop()
        if isinstance(item, ReluCache):
            if item.x.size:
                best = min(best, float(np.min(np.abs(item.x))))
        elif isinstance(item, PoolCache):
            x = item.x
            n, c, h, w = x.shape
            ho, wo = h // 2, w // 2
            if ho and wo:
                win = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
                win = np.sort(win.transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4), axis=1)
                # ties among ReLU-clamped zeros are covered by the ReLU margin
                live = win[:, 3] > 0
                if np.any(live):
                    best = min(best, float(np.min(win[live, 3] - win[live, 2])))
        elif isinstance(item, Kink):
            best = min(best, float(item.margin))
        elif isinstance(item, dict):
            stack.extend(item.values())
        elif isinstance(item, (list, tuple)):
            stack.extend(item)
    return best
