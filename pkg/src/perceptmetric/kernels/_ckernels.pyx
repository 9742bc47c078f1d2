# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: conv1d and maxpool1d, forward and backward.

conv1d is cast as im2col plus a hand-rolled GEMM whose inner loops run
over contiguous rows, which the C compiler vectorizes. Semantics match
numpy_backend; summation order differs, so results agree to float64
rounding rather than bitwise.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


def conv_out_len(L, K, stride, pad):
    return (L + 2 * pad - K) // stride + 1


cdef void _im2col(double[:, :, ::1] xp, double[:, ::1] colT,
                  Py_ssize_t K, Py_ssize_t stride, Py_ssize_t Lout) noexcept nogil:
    # colT[(i*K + k), (b*Lout + t)] = xp[b, i, t*stride + k]
    cdef Py_ssize_t B = xp.shape[0], Cin = xp.shape[1]
    cdef Py_ssize_t b, i, k, t, row, colbase
    for b in range(B):
        colbase = b * Lout
        for i in range(Cin):
            for k in range(K):
                row = i * K + k
                if stride == 1:
                    for t in range(Lout):
                        colT[row, colbase + t] = xp[b, i, t + k]
                else:
                    for t in range(Lout):
                        colT[row, colbase + t] = xp[b, i, t * stride + k]


cdef void _gemm_rowstream(double[:, ::1] A, double[:, ::1] X,
                          double[:, ::1] Y) noexcept nogil:
    # Y (M, N) += A (M, P) @ X (P, N); all rows contiguous. Output rows
    # are register-blocked in fours so each X row streams once per block.
    cdef Py_ssize_t M = A.shape[0], P = A.shape[1], N = X.shape[1]
    cdef Py_ssize_t m0, m, p, n
    cdef double a0, a1, a2, a3, xv
    m0 = 0
    while m0 + 4 <= M:
        for p in range(P):
            a0 = A[m0, p]
            a1 = A[m0 + 1, p]
            a2 = A[m0 + 2, p]
            a3 = A[m0 + 3, p]
            if a0 != 0.0 or a1 != 0.0 or a2 != 0.0 or a3 != 0.0:
                for n in range(N):
                    xv = X[p, n]
                    Y[m0, n] += a0 * xv
                    Y[m0 + 1, n] += a1 * xv
                    Y[m0 + 2, n] += a2 * xv
                    Y[m0 + 3, n] += a3 * xv
        m0 += 4
    for m in range(m0, M):
        for p in range(P):
            a0 = A[m, p]
            if a0 != 0.0:
                for n in range(N):
                    Y[m, n] += a0 * X[p, n]


cdef void _gemm_dotrows(double[:, ::1] A, double[:, ::1] B,
                        double[:, ::1] Y) noexcept nogil:
    # Y (M, P) = A (M, N) @ B(P, N)^T as dot products, with four A rows
    # per pass so each B row is reused from cache.
    cdef Py_ssize_t M = A.shape[0], N = A.shape[1], P = B.shape[0]
    cdef Py_ssize_t m0, m, p, n
    cdef double acc0, acc1, acc2, acc3, bv
    m0 = 0
    while m0 + 4 <= M:
        for p in range(P):
            acc0 = acc1 = acc2 = acc3 = 0.0
            for n in range(N):
                bv = B[p, n]
                acc0 += A[m0, n] * bv
                acc1 += A[m0 + 1, n] * bv
                acc2 += A[m0 + 2, n] * bv
                acc3 += A[m0 + 3, n] * bv
            Y[m0, p] = acc0
            Y[m0 + 1, p] = acc1
            Y[m0 + 2, p] = acc2
            Y[m0 + 3, p] = acc3
        m0 += 4
    for m in range(m0, M):
        for p in range(P):
            acc0 = 0.0
            for n in range(N):
                acc0 += A[m, n] * B[p, n]
            Y[m, p] = acc0


def conv1d_forward(cnp.ndarray x_arr, cnp.ndarray w_arr, b_arr=None,
                   int stride=1, int pad=0):
    from .numpy_backend import _check_conv_shapes
    _check_conv_shapes(x_arr, w_arr, b_arr, stride, pad)

    cdef double[:, :, ::1] xp = np.pad(x_arr, ((0, 0), (0, 0), (pad, pad))) \
        if pad else np.ascontiguousarray(x_arr)
    w_2d = np.ascontiguousarray(w_arr.reshape(w_arr.shape[0], -1))
    cdef double[:, ::1] wmat = w_2d
    cdef Py_ssize_t B = xp.shape[0], Cin = xp.shape[1], Lp = xp.shape[2]
    cdef Py_ssize_t Cout = w_arr.shape[0], K = w_arr.shape[2]
    cdef Py_ssize_t Lout = (Lp - K) // stride + 1
    cdef Py_ssize_t N = B * Lout

    colT_arr = np.empty((Cin * K, N), dtype=np.float64)
    ymat_arr = np.zeros((Cout, N), dtype=np.float64)
    cdef double[:, ::1] colT = colT_arr
    cdef double[:, ::1] ymat = ymat_arr
    with nogil:
        _im2col(xp, colT, K, stride, Lout)
        _gemm_rowstream(wmat, colT, ymat)

    y = np.ascontiguousarray(
        ymat_arr.reshape(Cout, B, Lout).transpose(1, 0, 2))
    if b_arr is not None:
        y += np.asarray(b_arr)[:, None]
    return y


def conv1d_backward(cnp.ndarray x_arr, cnp.ndarray w_arr, cnp.ndarray gy_arr,
                    int stride=1, int pad=0, bint with_bias=True):
    cdef double[:, :, ::1] xp = np.pad(x_arr, ((0, 0), (0, 0), (pad, pad))) \
        if pad else np.ascontiguousarray(x_arr)
    w_2d = np.ascontiguousarray(w_arr.reshape(w_arr.shape[0], -1))
    cdef double[:, ::1] wmat = w_2d
    cdef Py_ssize_t B = xp.shape[0], Cin = xp.shape[1], Lp = xp.shape[2]
    cdef Py_ssize_t Cout = w_arr.shape[0], K = w_arr.shape[2]
    cdef Py_ssize_t Lout = gy_arr.shape[2]
    cdef Py_ssize_t L = x_arr.shape[2]
    cdef Py_ssize_t N = B * Lout

    # gy as (Cout, B*Lout) with contiguous rows
    gym_arr = np.ascontiguousarray(
        np.asarray(gy_arr).transpose(1, 0, 2).reshape(Cout, N))
    cdef double[:, ::1] gym = gym_arr

    colT_arr = np.empty((Cin * K, N), dtype=np.float64)
    gw_arr = np.empty((Cout, Cin * K), dtype=np.float64)
    gcolT_arr = np.zeros((Cin * K, N), dtype=np.float64)
    gxp_arr = np.zeros((B, Cin, Lp), dtype=np.float64)
    cdef double[:, ::1] colT = colT_arr
    cdef double[:, ::1] gw2 = gw_arr
    cdef double[:, ::1] gcolT = gcolT_arr
    cdef double[:, :, ::1] gxp = gxp_arr
    cdef double[:, ::1] wT  # (Cin*K, Cout) contiguous rows
    wT_arr = np.ascontiguousarray(w_2d.T)
    wT = wT_arr

    cdef Py_ssize_t b, i, k, t, row, colbase
    with nogil:
        _im2col(xp, colT, K, stride, Lout)
        _gemm_dotrows(gym, colT, gw2)      # gw = gy_mat @ colT^T
        _gemm_rowstream(wT, gym, gcolT)    # gcol = W^T @ gy_mat
        # col2im: scatter-add patch gradients back onto the padded input
        for b in range(B):
            colbase = b * Lout
            for i in range(Cin):
                for k in range(K):
                    row = i * K + k
                    if stride == 1:
                        for t in range(Lout):
                            gxp[b, i, t + k] += gcolT[row, colbase + t]
                    else:
                        for t in range(Lout):
                            gxp[b, i, t * stride + k] += gcolT[row, colbase + t]

    gx = gxp_arr[:, :, pad : pad + L] if pad else gxp_arr
    gb = np.asarray(gy_arr).sum(axis=(0, 2)) if with_bias else None
    return np.ascontiguousarray(gx), gw_arr.reshape(Cout, Cin, K), gb


def maxpool1d_forward(cnp.ndarray x_arr, int window):
    from ..errors import ConfigurationError
    if window < 1:
        raise ConfigurationError(f"maxpool window must be >= 1, got {window}")
    if x_arr.shape[2] // window < 1:
        raise ConfigurationError(
            f"maxpool window {window} exceeds input length {x_arr.shape[2]}"
        )

    cdef double[:, :, ::1] x = np.ascontiguousarray(x_arr)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Lout = L // window

    y_arr = np.empty((B, C, Lout), dtype=np.float64)
    idx_arr = np.empty((B, C, Lout), dtype=np.int64)
    cdef double[:, :, ::1] y = y_arr
    cdef long long[:, :, ::1] idx = idx_arr

    cdef Py_ssize_t bi, c, t, k, best_k
    cdef double best
    with nogil:
        for bi in range(B):
            for c in range(C):
                for t in range(Lout):
                    best = x[bi, c, t * window]
                    best_k = t * window
                    for k in range(t * window + 1, (t + 1) * window):
                        if x[bi, c, k] > best:  # ties keep lowest index
                            best = x[bi, c, k]
                            best_k = k
                    y[bi, c, t] = best
                    idx[bi, c, t] = best_k
    return y_arr, idx_arr


def maxpool1d_backward(cnp.ndarray gy_arr, cnp.ndarray idx_arr, Py_ssize_t length):
    cdef double[:, :, ::1] gy = np.ascontiguousarray(gy_arr)
    cdef long long[:, :, ::1] idx = np.ascontiguousarray(idx_arr)
    cdef Py_ssize_t B = gy.shape[0], C = gy.shape[1], Lout = gy.shape[2]

    gx_arr = np.zeros((B, C, length), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr

    cdef Py_ssize_t bi, c, t
    with nogil:
        for bi in range(B):
            for c in range(C):
                for t in range(Lout):
                    gx[bi, c, idx[bi, c, t]] += gy[bi, c, t]
    return gx_arr
