"""Recurrent and convolutional encoder ops.

Two routes are provided for each recurrent cell:

* ``lstm_cell_step`` / ``gru_cell_step`` compose primitive tensor ops, one
  time step at a time.  They are slow but obviously correct and are used as
  the reference in tests.
* ``lstm_direction`` / ``gru_direction`` run a whole sequence as a single
  tape node with a hand-written backward pass through time.  The sequential
  loops are compiled with numba.

LSTM parameters use gate blocks in the order (input, forget, output,
candidate): ``w_ih`` is 4u x d, ``w_hh`` is 4u x u and ``bias`` has 4u
entries.  GRU parameters follow (reset, update, new) with separate input and
hidden biases, each 3u long.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    as_tensor,
    concat,
    make_result,
    matmul,
    sigmoid,
    tanh,
)


# ---------------------------------------------------------------------------
# reference single-step cells built from primitives

def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
                   w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    u = h_prev.shape[0]
    a = matmul(w_ih, x) + matmul(w_hh, h_prev) + bias
    i = sigmoid(a[0:u])
    f = sigmoid(a[u:2 * u])
    o = sigmoid(a[2 * u:3 * u])
    g = tanh(a[3 * u:4 * u])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


def gru_cell_step(x: Tensor, h_prev: Tensor, w_ih: Tensor, w_hh: Tensor,
                  b_ih: Tensor, b_hh: Tensor) -> Tensor:
    u = h_prev.shape[0]
    ax = matmul(w_ih, x) + b_ih
    ah = matmul(w_hh, h_prev) + b_hh
    r = sigmoid(ax[0:u] + ah[0:u])
    z = sigmoid(ax[u:2 * u] + ah[u:2 * u])
    n = tanh(ax[2 * u:3 * u] + r * ah[2 * u:3 * u])
    return (1.0 - z) * n + z * h_prev


# ---------------------------------------------------------------------------
# compiled recurrences

@numba.njit(cache=True)
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _lstm_forward(px, w_hh):
    steps, four_u = px.shape
    u = four_u // 4
    act = np.empty((steps, four_u))
    cs = np.empty((steps, u))
    hs = np.empty((steps, u))
    h = np.zeros(u)
    c = np.zeros(u)
    a = np.empty(four_u)
    for t in range(steps):
        for r in range(four_u):
            s = px[t, r]
            for k in range(u):
                s += w_hh[r, k] * h[k]
            a[r] = s
        for k in range(u):
            ig = _sig(a[k])
            fg = _sig(a[u + k])
            og = _sig(a[2 * u + k])
            gg = math.tanh(a[3 * u + k])
            c[k] = fg * c[k] + ig * gg
            act[t, k] = ig
            act[t, u + k] = fg
            act[t, 2 * u + k] = og
            act[t, 3 * u + k] = gg
        for k in range(u):
            h[k] = act[t, 2 * u + k] * math.tanh(c[k])
            cs[t, k] = c[k]
            hs[t, k] = h[k]
    return act, cs, hs


@numba.njit(cache=True)
def _lstm_backward(dhs, act, cs, w_hh_t):
    steps, four_u = act.shape
    u = four_u // 4
    da = np.zeros((steps, four_u))
    dh_next = np.zeros(u)
    dc_next = np.zeros(u)
    for t in range(steps - 1, -1, -1):
        for k in range(u):
            ig = act[t, k]
            fg = act[t, u + k]
            og = act[t, 2 * u + k]
            gg = act[t, 3 * u + k]
            tc = math.tanh(cs[t, k])
            c_prev = cs[t - 1, k] if t > 0 else 0.0
            dh = dhs[t, k] + dh_next[k]
            dc = dh * og * (1.0 - tc * tc) + dc_next[k]
            da[t, k] = dc * gg * ig * (1.0 - ig)
            da[t, u + k] = dc * c_prev * fg * (1.0 - fg)
            da[t, 2 * u + k] = dh * tc * og * (1.0 - og)
            da[t, 3 * u + k] = dc * ig * (1.0 - gg * gg)
            dc_next[k] = dc * fg
        for k in range(u):
            s = 0.0
            for r in range(four_u):
                s += w_hh_t[k, r] * da[t, r]
            dh_next[k] = s
    return da


@numba.njit(cache=True)
def _gru_forward(ax, w_hh, b_hh):
    steps, three_u = ax.shape
    u = three_u // 3
    rs = np.empty((steps, u))
    zs = np.empty((steps, u))
    ns = np.empty((steps, u))
    ahn = np.empty((steps, u))
    hs = np.empty((steps, u))
    h = np.zeros(u)
    ah = np.empty(three_u)
    for t in range(steps):
        for r in range(three_u):
            s = b_hh[r]
            for k in range(u):
                s += w_hh[r, k] * h[k]
            ah[r] = s
        for k in range(u):
            rg = _sig(ax[t, k] + ah[k])
            zg = _sig(ax[t, u + k] + ah[u + k])
            ng = math.tanh(ax[t, 2 * u + k] + rg * ah[2 * u + k])
            rs[t, k] = rg
            zs[t, k] = zg
            ns[t, k] = ng
            ahn[t, k] = ah[2 * u + k]
        for k in range(u):
            h[k] = (1.0 - zs[t, k]) * ns[t, k] + zs[t, k] * h[k]
            hs[t, k] = h[k]
    return rs, zs, ns, ahn, hs


@numba.njit(cache=True)
def _gru_backward(dhs, rs, zs, ns, ahn, hs, w_hh_t):
    steps, u = hs.shape
    three_u = 3 * u
    dax = np.zeros((steps, three_u))
    dah = np.zeros((steps, three_u))
    dh_next = np.zeros(u)
    for t in range(steps - 1, -1, -1):
        for k in range(u):
            h_prev = hs[t - 1, k] if t > 0 else 0.0
            dh = dhs[t, k] + dh_next[k]
            rg = rs[t, k]
            zg = zs[t, k]
            ng = ns[t, k]
            dn = dh * (1.0 - zg) * (1.0 - ng * ng)
            dz = dh * (h_prev - ng) * zg * (1.0 - zg)
            dr = dn * ahn[t, k] * rg * (1.0 - rg)
            dax[t, k] = dr
            dax[t, u + k] = dz
            dax[t, 2 * u + k] = dn
            dah[t, k] = dr
            dah[t, u + k] = dz
            dah[t, 2 * u + k] = dn * rg
            dh_next[k] = dh * zg
        for k in range(u):
            s = dh_next[k]
            for r in range(three_u):
                s += w_hh_t[k, r] * dah[t, r]
            dh_next[k] = s
    return dax, dah


# ---------------------------------------------------------------------------
# fused sequence ops

def _check_seq(x: Tensor, w_ih: Tensor, w_hh: Tensor, gates: int) -> int:
    if x.ndim != 2:
        raise ShapeError(f"sequence input must be d x n, got {x.shape}")
    u = w_hh.shape[1]
    if w_hh.shape != (gates * u, u) or w_ih.shape != (gates * u, x.shape[0]):
        raise ShapeError(f"recurrent parameter shapes {w_ih.shape}, {w_hh.shape} "
                         f"do not match input {x.shape}")
    return u


def lstm_direction(x, w_ih, w_hh, bias, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over every column of ``x`` (d x n) -> u x n."""
    x, w_ih, w_hh, bias = map(as_tensor, (x, w_ih, w_hh, bias))
    _check_seq(x, w_ih, w_hh, 4)
    xs = x.data[:, ::-1] if reverse else x.data
    px = (w_ih.data @ xs).T + bias.data
    act, cs, hs = _lstm_forward(np.ascontiguousarray(px), w_hh.data)
    out = hs.T[:, ::-1] if reverse else hs.T
    w_ih_d, w_hh_t = w_ih.data, np.ascontiguousarray(w_hh.data.T)

    def back(g):
        gs = g[:, ::-1] if reverse else g
        da = _lstm_backward(np.ascontiguousarray(gs.T), act, cs, w_hh_t)
        d_w_ih = da.T @ xs.T
        d_w_hh = da[1:].T @ hs[:-1]
        d_x = w_ih_d.T @ da.T
        if reverse:
            d_x = d_x[:, ::-1]
        return d_x, d_w_ih, d_w_hh, da.sum(axis=0)

    return make_result(np.ascontiguousarray(out), (x, w_ih, w_hh, bias), back)


def gru_direction(x, w_ih, w_hh, b_ih, b_hh, reverse: bool = False) -> Tensor:
    x, w_ih, w_hh, b_ih, b_hh = map(as_tensor, (x, w_ih, w_hh, b_ih, b_hh))
    _check_seq(x, w_ih, w_hh, 3)
    xs = x.data[:, ::-1] if reverse else x.data
    ax = (w_ih.data @ xs).T + b_ih.data
    rs, zs, ns, ahn, hs = _gru_forward(np.ascontiguousarray(ax), w_hh.data, b_hh.data)
    out = hs.T[:, ::-1] if reverse else hs.T
    w_ih_d, w_hh_t = w_ih.data, np.ascontiguousarray(w_hh.data.T)

    def back(g):
        gs = g[:, ::-1] if reverse else g
        dax, dah = _gru_backward(np.ascontiguousarray(gs.T), rs, zs, ns, ahn, hs, w_hh_t)
        d_w_ih = dax.T @ xs.T
        d_w_hh = dah[1:].T @ hs[:-1]
        d_x = w_ih_d.T @ dax.T
        if reverse:
            d_x = d_x[:, ::-1]
        return d_x, d_w_ih, d_w_hh, dax.sum(axis=0), dah.sum(axis=0)

    return make_result(np.ascontiguousarray(out), (x, w_ih, w_hh, b_ih, b_hh), back)


# ---------------------------------------------------------------------------
# convolution

def unfold_columns(x, width: int) -> Tensor:
    """Stack a same-padded window of ``width`` columns around each position.

    Output row ``j * d + r`` at column ``t`` holds ``x[r, t + j - width // 2]``
    (zero outside the sequence).
    """
    x = as_tensor(x)
    if width < 1 or width % 2 == 0:
        raise ValueError(f"kernel width must be a positive odd number, got {width}")
    d, n = x.shape
    half = width // 2
    padded = np.zeros((d, n + 2 * half))
    padded[:, half:half + n] = x.data
    out = np.concatenate([padded[:, j:j + n] for j in range(width)], axis=0)

    def back(g):
        gp = np.zeros((d, n + 2 * half))
        for j in range(width):
            gp[:, j:j + n] += g[j * d:(j + 1) * d]
        return (gp[:, half:half + n],)

    return make_result(out, (x,), back)


def conv1d_same(x, weight, bias, width: int) -> Tensor:
    """tanh(weight @ unfold(x) + bias): ``weight`` is c_out x (width * d)."""
    patches = unfold_columns(x, width)
    return tanh(matmul(weight, patches) + as_tensor(bias).reshape(-1, 1))


def pad_columns(x: Tensor, n: int) -> Tensor:
    """Right-pad ``x`` with zero columns up to ``n``."""
    if x.shape[1] == n:
        return x
    return concat([x, Tensor(np.zeros((x.shape[0], n - x.shape[1])))], axis=1)


__all__ = [
    "lstm_cell_step",
    "gru_cell_step",
    "lstm_direction",
    "gru_direction",
    "unfold_columns",
    "conv1d_same",
    "pad_columns",
]
