"""Vectorized numpy implementations of the hot kernels.

All kernels operate on float64 arrays with a leading batch axis:
inputs are (B, C, L), convolution kernels are (C_out, C_in, K).
Convolution is cross-correlation (no kernel flip), the conventional
deep-learning definition.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError

NAME = "numpy"


def _check_conv_shapes(x, w, b, stride, pad):
    if x.ndim != 3 or w.ndim != 3:
        raise ConfigurationError(
            f"conv1d expects input (B, C_in, L) and kernels (C_out, C_in, K); "
            f"got {x.shape} and {w.shape}"
        )
    if x.shape[1] != w.shape[1]:
        raise ConfigurationError(
            f"conv1d channel mismatch: input has C_in={x.shape[1]}, "
            f"kernels expect C_in={w.shape[1]}"
        )
    if b is not None and b.shape != (w.shape[0],):
        raise ConfigurationError(
            f"conv1d bias shape {b.shape} != (C_out,) = ({w.shape[0]},)"
        )
    if stride < 1:
        raise ConfigurationError(f"conv1d stride must be >= 1, got {stride}")
    if x.shape[2] + 2 * pad < w.shape[2]:
        raise ConfigurationError(
            f"conv1d kernel K={w.shape[2]} longer than padded input "
            f"L+2*pad={x.shape[2] + 2 * pad}"
        )


def conv_out_len(L, K, stride, pad):
    return (L + 2 * pad - K) // stride + 1


def _im2colT(xp, K, stride, L_out):
    """(B, C_in, Lp) -> (C_in * K, B * L_out) patch matrix.

    colT[i*K + k, b*L_out + t] = xp[b, i, t*stride + k]. Built from K
    contiguous-run copies so the single GEMM below dominates.
    """
    B, C, _ = xp.shape
    span = stride * (L_out - 1) + 1
    col = np.empty((C, K, B, L_out))
    for k in range(K):
        # (B, C, L_out) slice -> (C, B, L_out)
        col[:, k] = xp[:, :, k : k + span : stride].transpose(1, 0, 2)
    return col.reshape(C * K, B * L_out)


def conv1d_forward(x, w, b=None, stride=1, pad=0):
    """Cross-correlate (B, C_in, L) with (C_out, C_in, K) -> (B, C_out, L_out).

    Implemented as im2col plus one BLAS matmul.
    """
    _check_conv_shapes(x, w, b, stride, pad)
    C_out, C_in, K = w.shape
    B = x.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    L_out = (xp.shape[2] - K) // stride + 1
    colT = _im2colT(xp, K, stride, L_out)
    y = w.reshape(C_out, C_in * K) @ colT  # (C_out, B*L_out)
    if b is not None:
        y += b[:, None]
    return np.ascontiguousarray(y.reshape(C_out, B, L_out).transpose(1, 0, 2))


def conv1d_backward(x, w, gy, stride=1, pad=0, with_bias=True):
    """Gradients of conv1d_forward. Returns (gx, gw, gb-or-None)."""
    _check_conv_shapes(x, w, None, stride, pad)
    C_out, C_in, K = w.shape
    B, _, L = x.shape
    L_out = gy.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x

    colT = _im2colT(xp, K, stride, L_out)  # (C_in*K, B*L_out)
    gy_mat = np.ascontiguousarray(gy.transpose(1, 0, 2)).reshape(C_out, B * L_out)
    gw = (gy_mat @ colT.T).reshape(C_out, C_in, K)
    gcolT = w.reshape(C_out, C_in * K).T @ gy_mat  # (C_in*K, B*L_out)

    # col2im: scatter patch gradients back onto the (padded) input.
    gxp = np.zeros_like(xp) if pad else np.zeros_like(x)
    gcolT = gcolT.reshape(C_in, K, B, L_out)
    span = stride * (L_out - 1) + 1
    for k in range(K):
        gxp[:, :, k : k + span : stride] += gcolT[:, k].transpose(1, 0, 2)
    gx = gxp[:, :, pad : pad + L] if pad else gxp
    gb = gy.sum(axis=(0, 2)) if with_bias else None
    return np.ascontiguousarray(gx), gw, gb


def maxpool1d_forward(x, window):
    """Non-overlapping max over windows; trailing remainder is dropped.

    Returns (y, idx) where idx holds, per output element, the absolute
    input position of its maximum (first occurrence on ties).
    """
    if window < 1:
        raise ConfigurationError(f"maxpool window must be >= 1, got {window}")
    B, C, L = x.shape
    L_out = L // window
    if L_out < 1:
        raise ConfigurationError(f"maxpool window {window} exceeds input length {L}")
    xt = x[:, :, : L_out * window].reshape(B, C, L_out, window)
    rel = xt.argmax(axis=3)
    y = np.take_along_axis(xt, rel[..., None], axis=3)[..., 0]
    idx = rel + window * np.arange(L_out)[None, None, :]
    return np.ascontiguousarray(y), idx.astype(np.int64)


def maxpool1d_backward(gy, idx, length):
    """Route each output gradient to its recorded argmax position."""
    B, C, _ = gy.shape
    gx = np.zeros((B, C, length), dtype=gy.dtype)
    np.put_along_axis(gx, idx, gy, axis=2)
    return gx
