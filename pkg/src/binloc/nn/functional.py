"""Forward/backward kernels for the supported layer kinds.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes that cache plus the upstream gradient. Arrays carry a
leading batch axis. Convolutions and pools are "valid" (no padding); convs
use stride 1 and pools use stride equal to the pool size. Dtype follows the
input, so float64 inputs give float64 gradients.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view


def _fft_len(n: int) -> int:
    return sfft.next_fast_len(n, real=True)


# -- conv1d ------------------------------------------------------------------
# Cross-correlation evaluated with real FFTs of length >= L. For output lags
# t <= L - K no index wraps, so the circular result equals the linear one.

def conv1d_forward(x, w, b):
    """x: (B, C, L), w: (O, C, K), b: (O,) -> (B, O, L - K + 1)."""
    B, C, L = x.shape
    O, Cw, K = w.shape
    if Cw != C:
        raise ValueError(f"conv1d expects {Cw} input channels, got input shape {x.shape}")
    if L < K:
        raise ValueError(f"conv1d kernel {K} longer than input length {L} (input shape {x.shape})")
    n = _fft_len(L)
    # frequency-major contiguous layouts keep the stacked matmuls fast
    xf = _freq_major(sfft.rfft(x, n, axis=-1))          # F, B, C
    wf = _freq_major(sfft.rfft(w, n, axis=-1))          # F, O, C
    yf = np.matmul(xf, np.ascontiguousarray(np.conj(wf).transpose(0, 2, 1)))  # F, B, O
    y = sfft.irfft(_batch_major(yf), n, axis=-1)[..., :L - K + 1]
    y = (y + b[:, None]).astype(x.dtype, copy=False)
    return y, (xf, wf, n, L, K)


def _freq_major(a):
    """(P, Q, F) -> contiguous (F, P, Q)."""
    return np.ascontiguousarray(a.transpose(2, 0, 1))


def _batch_major(a):
    """(F, P, Q) -> contiguous (P, Q, F)."""
    return np.ascontiguousarray(a.transpose(1, 2, 0))


def conv1d_backward(cache, dy, need_dx=True):
    xf, wf, n, L, K = cache
    dyf = _freq_major(sfft.rfft(dy, n, axis=-1))        # F, B, O
    # dw[o, c, k] = sum_b sum_t dy[b, o, t] x[b, c, t + k]
    dwf = np.matmul(np.ascontiguousarray(np.conj(dyf).transpose(0, 2, 1)), xf)  # F, O, C
    dw = sfft.irfft(_batch_major(dwf), n, axis=-1)[..., :K].astype(dy.dtype, copy=False)
    db = dy.sum(axis=(0, 2))
    dx = None
    if need_dx:
        # dx = full convolution of dy with w (length L, so no wrap for n >= L)
        dxf = np.matmul(dyf, wf)                          # F, B, C
        dx = sfft.irfft(_batch_major(dxf), n, axis=-1)[..., :L].astype(dy.dtype, copy=False)
    return dx, dw, db


# -- conv2d ------------------------------------------------------------------

def conv2d_forward(x, w, b):
    """x: (B, C, H, W), w: (O, C, KH, KW) -> (B, O, H - KH + 1, W - KW + 1)."""
    B, C, H, W = x.shape
    O, Cw, KH, KW = w.shape
    if Cw != C:
        raise ValueError(f"conv2d expects {Cw} input channels, got input shape {x.shape}")
    if H < KH or W < KW:
        raise ValueError(f"conv2d kernel {KH}x{KW} larger than input shape {x.shape}")
    cols = sliding_window_view(x, (KH, KW), axis=(2, 3))   # B, C, H', W', KH, KW
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # B, H', W', O
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2)) + b[:, None, None]
    return y.astype(x.dtype, copy=False), (x, w)


def conv2d_backward(cache, dy, need_dx=True):
    x, w = cache
    O, C, KH, KW = w.shape
    cols = sliding_window_view(x, (KH, KW), axis=(2, 3))
    dw = np.tensordot(dy, cols, axes=([0, 2, 3], [0, 2, 3]))  # O, C, KH, KW
    db = dy.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        padded = np.pad(dy, ((0, 0), (0, 0), (KH - 1, KH - 1), (KW - 1, KW - 1)))
        pcols = sliding_window_view(padded, (KH, KW), axis=(2, 3))  # B, O, H, W, KH, KW
        flipped = w[:, :, ::-1, ::-1]
        dx = np.tensordot(pcols, flipped, axes=([1, 4, 5], [0, 2, 3]))  # B, H, W, C
        dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
    return dx, dw.astype(dy.dtype, copy=False), db


# -- pooling -----------------------------------------------------------------
# argmax picks the first maximum, so ties route the gradient to the lowest index.

def maxpool1d_forward(x, size):
    B, C, L = x.shape
    n = L // size
    if n < 1:
        raise ValueError(f"maxpool1d size {size} exceeds input length {L}")
    win = x[..., :n * size].reshape(B, C, n, size)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (x.shape, idx, size)


def maxpool1d_backward(cache, dy):
    shape, idx, size = cache
    B, C, L = shape
    n = idx.shape[-1]
    dwin = np.zeros((B, C, n, size), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros(shape, dtype=dy.dtype)
    dx[..., :n * size] = dwin.reshape(B, C, n * size)
    return dx


def maxpool2d_forward(x, size):
    ph, pw = size
    B, C, H, W = x.shape
    h, w = H // ph, W // pw
    if h < 1 or w < 1:
        raise ValueError(f"maxpool2d size {ph}x{pw} exceeds input shape {x.shape}")
    win = x[:, :, :h * ph, :w * pw].reshape(B, C, h, ph, w, pw)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h, w, ph * pw)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (x.shape, idx, size)


def maxpool2d_backward(cache, dy):
    shape, idx, (ph, pw) = cache
    B, C, H, W = shape
    h, w = idx.shape[-2:]
    dwin = np.zeros((B, C, h, w, ph * pw), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dwin = dwin.reshape(B, C, h, w, ph, pw).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(shape, dtype=dy.dtype)
    dx[:, :, :h * ph, :w * pw] = dwin.reshape(B, C, h * ph, w * pw)
    return dx


# -- dense and elementwise -----------------------------------------------------

def dense_forward(x, w, b):
    """x: (B, D), w: (D, U), b: (U,) -> (B, U)."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"dense expects input (B, {w.shape[0]}), got {x.shape}")
    return x @ w + b, (x, w)


def dense_backward(cache, dy, need_dx=True):
    x, w = cache
    dw = x.T @ dy
    db = dy.sum(axis=0)
    dx = dy @ w.T if need_dx else None
    return dx, dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, dy):
    return dy * mask


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(y, dy):
    return dy * (1.0 - y * y)


def softmax_forward(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, y


def softmax_backward(y, dy):
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


def flatten_forward(x):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(shape, dy):
    return dy.reshape(shape)


def concat_forward(parts):
    """Concatenate ``(B, D_i)`` arrays along the feature axis."""
    sizes = [p.shape[1] for p in parts]
    return np.concatenate(parts, axis=1), sizes


def concat_backward(sizes, dy):
    return np.split(dy, np.cumsum(sizes)[:-1], axis=1)
