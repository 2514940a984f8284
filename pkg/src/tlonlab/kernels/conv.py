"""Valid-padding 2-D convolution kernels (forward and backward)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..backend import njit, pick


@njit(cache=True)
def conv2d_forward_numba(x, w, stride):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[b, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[b, o, i, j] = acc
    return out


def conv2d_forward_numpy(x, w, stride):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("bcijuv,ocuv->boij", win, w, optimize=True)


conv2d_forward_kernel = pick(conv2d_forward_numba, conv2d_forward_numpy)


@njit(cache=True)
def conv2d_grad_input_numba(g, w, stride, h, wd):
    n, cout, ho, wo = g.shape
    _, cin, kh, kw = w.shape
    gx = np.zeros((n, cin, h, wd))
    for b in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    go = g[b, o, i, j]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                gx[b, c, i * stride + u, j * stride + v] += go * w[o, c, u, v]
    return gx


def conv2d_grad_input_numpy(g, w, stride, h, wd):
    n, cout, ho, wo = g.shape
    _, cin, kh, kw = w.shape
    gx = np.zeros((n, cin, h, wd))
    # scatter one kernel tap at a time; each tap touches a strided block
    contrib = np.einsum("boij,ocuv->bcijuv", g, w, optimize=True)
    for u in range(kh):
        for v in range(kw):
            gx[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride] += contrib[
                :, :, :, :, u, v
            ]
    return gx


conv2d_grad_input_kernel = pick(conv2d_grad_input_numba, conv2d_grad_input_numpy)


@njit(cache=True)
def conv2d_grad_weight_numba(g, x, stride, kh, kw):
    n, cout, ho, wo = g.shape
    cin = x.shape[1]
    gw = np.zeros((cout, cin, kh, kw))
    for b in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    go = g[b, o, i, j]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                gw[o, c, u, v] += go * x[b, c, i * stride + u, j * stride + v]
    return gw


def conv2d_grad_weight_numpy(g, x, stride, kh, kw):
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("boij,bcijuv->ocuv", g, win, optimize=True)


conv2d_grad_weight_kernel = pick(conv2d_grad_weight_numba, conv2d_grad_weight_numpy)
