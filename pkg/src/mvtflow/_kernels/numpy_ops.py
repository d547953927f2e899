"""NumPy implementation of the dilated 1-D convolution kernels.

Works on batched, channel-major arrays: inputs are (B, C_in, T), weights
(C_out, C_in, K), outputs (B, C_out, T). Padding is applied by the caller;
these functions see the already padded input of length T + dilation*(K-1).
"""

import numpy as np


def conv1d_forward(xp: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int,
                   t_out: int) -> np.ndarray:
    n_batch, c_in, _ = xp.shape
    c_out, _, k = w.shape
    if k == 1:
        y = np.matmul(w[:, :, 0], xp[:, :, :t_out])
    else:
        win = _windows(xp, k, dilation, t_out)
        # (C_out, B, T) <- contract over (C_in, K)
        y = np.tensordot(w, win, axes=([1, 2], [1, 2])).swapaxes(0, 1)
    y = y + b[:, None]
    return np.ascontiguousarray(y)


def conv1d_backward_input(gy: np.ndarray, w: np.ndarray, dilation: int,
                          t_padded: int) -> np.ndarray:
    n_batch, c_out, t_out = gy.shape
    _, c_in, k = w.shape
    gxp = np.zeros((n_batch, c_in, t_padded), dtype=gy.dtype)
    for tap in range(k):
        lo = tap * dilation
        gxp[:, :, lo:lo + t_out] += np.matmul(w[:, :, tap].T, gy)
    return gxp


def conv1d_backward_weight(xp: np.ndarray, gy: np.ndarray, dilation: int,
                           k: int) -> tuple[np.ndarray, np.ndarray]:
    t_out = gy.shape[2]
    win = _windows(xp, k, dilation, t_out)
    # (C_out, C_in, K) <- contract over (B, T)
    gw = np.tensordot(gy, win, axes=([0, 2], [0, 3]))
    gb = gy.sum(axis=(0, 2))
    return np.ascontiguousarray(gw), gb


def _windows(xp: np.ndarray, k: int, dilation: int, t_out: int) -> np.ndarray:
    """Strided view (B, C_in, K, T) with win[b,i,k,t] = xp[b,i,t + k*dilation]."""
    n_batch, c_in, _ = xp.shape
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(n_batch, c_in, k, t_out), strides=(s0, s1, s2 * dilation, s2),
        writeable=False)
