"""Hot numeric kernels with a numba path and a pure-numpy path.

The backend is picked once at import time. Set ``CAMEVAL_NUMBA=0`` to force
the numpy implementations (also used automatically when numba is missing).
Both implementations are always importable under explicit names so they can
be compared against each other and benchmarked.

All kernels operate on batched, C-contiguous float64 arrays.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("CAMEVAL_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)
BACKEND = "numba" if USE_NUMBA else "numpy"


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# numpy implementations


def conv2d_forward_numpy(x, w, b, stride, pad):
    """x [B,C,H,W], w [O,C,KH,KW], b [O] -> [B,O,OH,OW]."""
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    oh = _out_size(x.shape[2], kh, stride, pad)
    ow = _out_size(x.shape[3], kw, stride, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # [B,OH,OW,O]
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward_input_numpy(g, w, in_h, in_w, stride, pad):
    """Gradient of a conv output w.r.t. its input; g [B,O,OH,OW] -> [B,C,H,W]."""
    bsz, _, oh, ow = g.shape
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    gxp = np.zeros((bsz, c, in_h + 2 * pad, in_w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))  # [B,OH,OW,C]
            gxp[:, :, i : i + (oh - 1) * stride + 1 : stride, j : j + (ow - 1) * stride + 1 : stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    return np.ascontiguousarray(gxp[:, :, pad : pad + in_h, pad : pad + in_w])


def maxpool2x2_forward_numpy(x):
    """2x2/stride-2 max pooling. Returns (out, argmax) with argmax in 0..3,
    the first row-major maximum of each window."""
    bsz, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    win = x[:, :, : 2 * oh, : 2 * ow].reshape(bsz, c, oh, 2, ow, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, oh, ow, 4)
    arg = np.argmax(win, axis=-1).astype(np.int64)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2x2_backward_numpy(g, arg, in_h, in_w):
    bsz, c, oh, ow = g.shape
    onehot = (arg[..., None] == np.arange(4)).astype(np.float64) * g[..., None]
    blocks = onehot.reshape(bsz, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    gx = np.zeros((bsz, c, in_h, in_w))
    gx[:, :, : 2 * oh, : 2 * ow] = blocks.reshape(bsz, c, 2 * oh, 2 * ow)
    return gx


def _axis_coords(n_in, n_out):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize_numpy(m, out_h, out_w):
    """Half-pixel-centre bilinear resize of a stack m [N,H,W] -> [N,out_h,out_w]."""
    y0, y1, fy = _axis_coords(m.shape[1], out_h)
    x0, x1, fx = _axis_coords(m.shape[2], out_w)
    top = m[:, y0, :]
    bot = m[:, y1, :]
    fx = fx[None, None, :]
    top = top[:, :, x0] * (1.0 - fx) + top[:, :, x1] * fx
    bot = bot[:, :, x0] * (1.0 - fx) + bot[:, :, x1] * fx
    fy = fy[None, :, None]
    return np.ascontiguousarray(top * (1.0 - fy) + bot * fy)


# ---------------------------------------------------------------------------
# numba implementations

if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def conv2d_forward_numba(x, w, b, stride, pad):
        bsz, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (wd + 2 * pad - kw) // stride + 1
        out = np.empty((bsz, o, oh, ow))
        for n in range(bsz):
            for oc in range(o):
                out[n, oc, :, :] = b[oc]
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[oc, ic, i, j]
                            for r in range(oh):
                                ih = r * stride - pad + i
                                if ih < 0 or ih >= h:
                                    continue
                                for q in range(ow):
                                    iw = q * stride - pad + j
                                    if iw >= 0 and iw < wd:
                                        out[n, oc, r, q] += wv * x[n, ic, ih, iw]
        return out

    @njit(cache=True, nogil=True)
    def conv2d_backward_input_numba(g, w, in_h, in_w, stride, pad):
        bsz, o, oh, ow = g.shape
        _, c, kh, kw = w.shape
        gx = np.zeros((bsz, c, in_h, in_w))
        for n in range(bsz):
            for oc in range(o):
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[oc, ic, i, j]
                            for r in range(oh):
                                ih = r * stride - pad + i
                                if ih < 0 or ih >= in_h:
                                    continue
                                for q in range(ow):
                                    iw = q * stride - pad + j
                                    if iw >= 0 and iw < in_w:
                                        gx[n, ic, ih, iw] += wv * g[n, oc, r, q]
        return gx

    @njit(cache=True, nogil=True)
    def maxpool2x2_forward_numba(x):
        bsz, c, h, w = x.shape
        oh, ow = h // 2, w // 2
        out = np.empty((bsz, c, oh, ow))
        arg = np.empty((bsz, c, oh, ow), dtype=np.int64)
        for n in range(bsz):
            for ch in range(c):
                for r in range(oh):
                    for q in range(ow):
                        best = x[n, ch, 2 * r, 2 * q]
                        k = 0
                        for t in range(1, 4):
                            v = x[n, ch, 2 * r + t // 2, 2 * q + t % 2]
                            if v > best:
                                best = v
                                k = t
                        out[n, ch, r, q] = best
                        arg[n, ch, r, q] = k
        return out, arg

    @njit(cache=True, nogil=True)
    def maxpool2x2_backward_numba(g, arg, in_h, in_w):
        bsz, c, oh, ow = g.shape
        gx = np.zeros((bsz, c, in_h, in_w))
        for n in range(bsz):
            for ch in range(c):
                for r in range(oh):
                    for q in range(ow):
                        k = arg[n, ch, r, q]
                        gx[n, ch, 2 * r + k // 2, 2 * q + k % 2] = g[n, ch, r, q]
        return gx

    @njit(cache=True, nogil=True)
    def _axis_coords_numba(n_in, n_out):
        scale = n_in / n_out
        i0 = np.empty(n_out, dtype=np.int64)
        i1 = np.empty(n_out, dtype=np.int64)
        f = np.empty(n_out)
        for d in range(n_out):
            s = (d + 0.5) * scale - 0.5
            if s < 0.0:
                s = 0.0
            if s > n_in - 1:
                s = n_in - 1.0
            a = int(np.floor(s))
            i0[d] = a
            i1[d] = min(a + 1, n_in - 1)
            f[d] = s - a
        return i0, i1, f

    @njit(cache=True, nogil=True)
    def bilinear_resize_numba(m, out_h, out_w):
        n, h, w = m.shape
        y0, y1, fy = _axis_coords_numba(h, out_h)
        x0, x1, fx = _axis_coords_numba(w, out_w)
        out = np.empty((n, out_h, out_w))
        for k in range(n):
            for r in range(out_h):
                a, b, ty = y0[r], y1[r], fy[r]
                for q in range(out_w):
                    c0, c1, tx = x0[q], x1[q], fx[q]
                    top = m[k, a, c0] * (1.0 - tx) + m[k, a, c1] * tx
                    bot = m[k, b, c0] * (1.0 - tx) + m[k, b, c1] * tx
                    out[k, r, q] = top * (1.0 - ty) + bot * ty
        return out


# ---------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    _conv_fwd = conv2d_forward_numba
    _conv_bwd = conv2d_backward_input_numba
    _pool_fwd = maxpool2x2_forward_numba
    _pool_bwd = maxpool2x2_backward_numba
    _resize = bilinear_resize_numba
else:
    _conv_fwd = conv2d_forward_numpy
    _conv_bwd = conv2d_backward_input_numpy
    _pool_fwd = maxpool2x2_forward_numpy
    _pool_bwd = maxpool2x2_backward_numpy
    _resize = bilinear_resize_numpy


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b, stride=1, pad=0):
    return _conv_fwd(_f64(x), _f64(w), _f64(b), int(stride), int(pad))


def conv2d_backward_input(g, w, in_h, in_w, stride=1, pad=0):
    return _conv_bwd(_f64(g), _f64(w), int(in_h), int(in_w), int(stride), int(pad))


def maxpool2x2_forward(x):
    return _pool_fwd(_f64(x))


def maxpool2x2_backward(g, arg, in_h, in_w):
    return _pool_bwd(_f64(g), np.ascontiguousarray(arg, dtype=np.int64), int(in_h), int(in_w))


def bilinear_resize(m, out_h, out_w):
    return _resize(_f64(m), int(out_h), int(out_w))
